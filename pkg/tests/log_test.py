import orjson

from callerkit.log import configure_logging, get_logger


def test_json_records_go_to_stderr(capsys):
    configure_logging("info", json=True)
    get_logger("callerkit.test").info("target_skipped", reason="no_callers")

    captured = capsys.readouterr()
    record = orjson.loads(captured.err.strip())
    assert captured.out == ""
    assert record["event"] == "target_skipped"
    assert record["system"] == "callerkit.test"
    assert record["reason"] == "no_callers"
    assert record["level"] == "info"
    assert "timestamp" in record


def test_level_filters_records(capsys):
    configure_logging("warning")
    log = get_logger("callerkit.test")
    log.info("hidden")
    log.warning("shown", file="a.py")

    err = capsys.readouterr().err
    assert "hidden" not in err
    assert "shown" in err
    assert "file=a.py" in err
