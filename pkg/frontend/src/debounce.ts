/**
 * Trailing-edge debouncer with response sequence numbers.
 *
 * At most one request is in flight; rapid input collapses to the trailing
 * value; responses arriving out of order are discarded by sequence number.
 */

export interface Scheduler {
  setTimeout(fn: () => void, ms: number): unknown;
  clearTimeout(handle: unknown): void;
  now(): number;
}

const realScheduler: Scheduler = {
  setTimeout: (fn, ms) => setTimeout(fn, ms),
  clearTimeout: (h) => clearTimeout(h as ReturnType<typeof setTimeout>),
  now: () => Date.now(),
};

export class DebouncedRequester<Req, Res> {
  private seq = 0;
  private applied = 0;
  private timer: unknown | null = null;
  private pending: Req | null = null;
  private inFlight = false;
  requestCount = 0;

  constructor(
    private send: (req: Req) => Promise<Res>,
    private apply: (res: Res) => void,
    private intervalMs = 150,
    private scheduler: Scheduler = realScheduler,
    private onError: (err: unknown) => void = () => {},
  ) {}

  /** Called on every slider movement; only the trailing value is sent. */
  update(req: Req): void {
    this.pending = req;
    if (this.timer !== null) {
      this.scheduler.clearTimeout(this.timer);
    }
    this.timer = this.scheduler.setTimeout(() => this.flush(), this.intervalMs);
  }

  private flush(): void {
    this.timer = null;
    if (this.pending === null || this.inFlight) {
      return; // a completed in-flight request re-flushes any pending value
    }
    const req = this.pending;
    this.pending = null;
    const id = ++this.seq;
    this.inFlight = true;
    this.requestCount += 1;
    this.send(req).then(
      (res) => {
        this.inFlight = false;
        if (id > this.applied) {
          this.applied = id;
          this.apply(res);
        }
        if (this.pending !== null && this.timer === null) {
          this.flush();
        }
      },
      (err) => {
        this.inFlight = false;
        this.onError(err);
        if (this.pending !== null && this.timer === null) {
          this.flush();
        }
      },
    );
  }
}
