"""Run the collector in-process and feed it from several emitter threads over HTTP.

    python demos/collector_over_http.py

Each emitter tags its events with ids, so a retried request after a dropped
connection is stored once. The script ends by scanning the log for torn or
corrupt lines.
"""

from __future__ import annotations

import tempfile
import threading
from pathlib import Path

from featrack.collector import FeedbackEvent, HttpSink, scan_log, serve


def main(emitters: int = 4, per_emitter: int = 250) -> None:
    with tempfile.TemporaryDirectory(prefix="featrack-http-") as tmp:
        log_path = Path(tmp) / "feedback.log"
        server = serve(("127.0.0.1", 0), log_path, known_metrics={"DoubleClickEnactment"}).start()
        print(f"collector at {server.url}")

        def emit(k: int) -> None:
            sink = HttpSink(server.url)
            for i in range(per_emitter):
                sink.send(FeedbackEvent("Commenting", "DoubleClickEnactment", "V1", client=f"demo-{k}", id=f"{k}:{i}"))
            # a deliberate resend of the last event is absorbed by the id check
            sink.send(FeedbackEvent("Commenting", "DoubleClickEnactment", "V1", client=f"demo-{k}", id=f"{k}:{per_emitter - 1}"))
            sink.close()

        threads = [threading.Thread(target=emit, args=(k,)) for k in range(emitters)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        server.stop()

        scan = scan_log(log_path)
        print(f"{len(scan.events)} events stored, {len(scan.corrupt_lines)} corrupt lines, partial tail: {scan.partial_tail}")


if __name__ == "__main__":
    main()
