def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        label = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {label}: {'PASS' if report.passed else 'FAIL'}", flush=True)
