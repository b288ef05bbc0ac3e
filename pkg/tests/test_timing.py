import pytest

from biasfilter.tools.timing import Timer


def test_timer_reports_elapsed_time():
    messages = []
    with Timer(text="Scored.", logger=messages.append) as timer:
        pass
    assert timer.elapsed >= 0.0
    assert len(messages) == 1
    assert messages[0].startswith("Scored. Elapsed time:")


def test_timer_without_start():
    timer = Timer(text="Decoded.", logger=None)
    with pytest.raises(RuntimeError):
        timer.stop()
    timer.start()
    assert timer.stop() == timer.elapsed
