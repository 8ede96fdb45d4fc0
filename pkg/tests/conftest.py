ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line[1])


from hypothesis import settings

# fixed example generation keeps test_output.txt reproducible
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")
