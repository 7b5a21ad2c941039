import threading
import time

from rhyme_mimic.clock import EventLoop, RealClock, VirtualClock


def test_virtual_clock_only_moves_when_advanced():
    clock = VirtualClock()
    assert clock.now_ms() == 0
    clock.advance_to(500)
    assert clock.now_ms() == 500


def test_virtual_loop_runs_timers_in_due_order():
    clock = VirtualClock()
    loop = EventLoop(clock)
    seen = []
    loop.call_at(300, lambda: seen.append(("c", clock.now_ms())))
    loop.call_at(100, lambda: seen.append(("a", clock.now_ms())))
    loop.call_at(200, lambda: seen.append(("b", clock.now_ms())))
    loop.run()
    assert seen == [("a", 100), ("b", 200), ("c", 300)]


def test_equal_due_times_run_in_scheduling_order():
    loop = EventLoop(VirtualClock())
    seen = []
    for name in "abcd":
        loop.call_at(50, lambda n=name: seen.append(n))
    loop.run()
    assert seen == ["a", "b", "c", "d"]


def test_cancelled_timer_skipped():
    loop = EventLoop(VirtualClock())
    seen = []
    timer = loop.call_at(10, lambda: seen.append("no"))
    loop.call_at(20, lambda: seen.append("yes"))
    timer.cancel()
    loop.run()
    assert seen == ["yes"]


def test_callbacks_can_schedule_more_work():
    loop = EventLoop(VirtualClock())
    seen = []

    def first():
        seen.append(loop.clock.now_ms())
        loop.call_later(40, lambda: seen.append(loop.clock.now_ms()))

    loop.call_at(10, first)
    loop.run()
    assert seen == [10, 50]


def test_injected_work_runs_before_timers():
    loop = EventLoop(VirtualClock())
    seen = []
    loop.call_at(5, lambda: seen.append("timer"))
    loop.call_threadsafe(lambda: seen.append("injected"))
    loop.run()
    assert seen == ["injected", "timer"]


def test_stop_ends_run():
    loop = EventLoop(VirtualClock())
    seen = []
    loop.call_at(1, lambda: seen.append(1))
    loop.call_at(2, loop.stop)
    loop.call_at(3, lambda: seen.append(3))
    loop.run()
    assert seen == [1]


def test_real_clock_timer_fires_after_delay():
    clock = RealClock()
    loop = EventLoop(clock)
    fired = []
    loop.call_later(50, lambda: fired.append(clock.now_ms()))
    start = time.monotonic()
    loop.run()
    elapsed = (time.monotonic() - start) * 1000
    assert fired and 40 <= fired[0] <= 500
    assert elapsed >= 40


def test_real_clock_threadsafe_injection_wakes_blocked_loop():
    loop = EventLoop(RealClock())
    seen = []

    def runner():
        loop.run(until_idle=False)

    thread = threading.Thread(target=runner)
    thread.start()
    time.sleep(0.05)
    loop.call_threadsafe(lambda: seen.append("hello"))
    time.sleep(0.05)
    loop.stop()
    thread.join(timeout=2)
    assert not thread.is_alive()
    assert seen == ["hello"]


def test_run_until_predicate():
    loop = EventLoop(VirtualClock())
    seen = []
    for i in range(10):
        loop.call_at(i * 10, lambda i=i: seen.append(i))
    loop.run_until(lambda: len(seen) >= 3)
    assert seen == [0, 1, 2]
