import { describe, expect, it } from "vitest";

import { DebouncedRequester, type Scheduler } from "./debounce";

/** Deterministic fake clock driving the debouncer. */
class FakeClock implements Scheduler {
  private t = 0;
  private timers: { at: number; fn: () => void; id: number }[] = [];
  private nextId = 1;

  setTimeout(fn: () => void, ms: number): unknown {
    const id = this.nextId++;
    this.timers.push({ at: this.t + ms, fn, id });
    return id;
  }

  clearTimeout(handle: unknown): void {
    this.timers = this.timers.filter((t) => t.id !== handle);
  }

  now(): number {
    return this.t;
  }

  async advance(ms: number): Promise<void> {
    const target = this.t + ms;
    for (;;) {
      const due = this.timers.filter((t) => t.at <= target).sort((a, b) => a.at - b.at)[0];
      if (!due) break;
      this.t = due.at;
      this.timers = this.timers.filter((t) => t.id !== due.id);
      due.fn();
      await Promise.resolve(); // let response handlers run
      await Promise.resolve();
    }
    this.t = target;
  }
}

function makeRequester(clock: FakeClock, respond: (req: number) => Promise<string>) {
  const applied: string[] = [];
  const requester = new DebouncedRequester<number, string>(
    respond,
    (res) => applied.push(res),
    150,
    clock,
  );
  return { requester, applied };
}

describe("DebouncedRequester", () => {
  it("issues at most 2 requests for 10 slider positions in 200 ms", async () => {
    const clock = new FakeClock();
    const { requester } = makeRequester(clock, async (req) => `r${req}`);
    for (let i = 0; i < 10; i++) {
      requester.update(i);
      await clock.advance(20);
    }
    await clock.advance(400);
    expect(requester.requestCount).toBeLessThanOrEqual(2);
    expect(requester.requestCount).toBeGreaterThanOrEqual(1);
  });

  it("sends only the trailing value", async () => {
    const clock = new FakeClock();
    const sent: number[] = [];
    const { requester, applied } = makeRequester(clock, async (req) => {
      sent.push(req);
      return `r${req}`;
    });
    requester.update(1);
    requester.update(2);
    requester.update(3);
    await clock.advance(1000);
    expect(sent).toEqual([3]);
    expect(applied).toEqual(["r3"]);
  });

  it("keeps at most one request in flight", async () => {
    const clock = new FakeClock();
    let open = 0;
    let maxOpen = 0;
    const resolvers: ((v: string) => void)[] = [];
    const { requester } = makeRequester(clock, (req) => {
      open += 1;
      maxOpen = Math.max(maxOpen, open);
      return new Promise<string>((resolve) => {
        resolvers.push((v) => {
          open -= 1;
          resolve(v);
        });
        void req;
      });
    });
    requester.update(1);
    await clock.advance(200);
    requester.update(2);
    await clock.advance(200); // debounce fires while request 1 is open
    expect(maxOpen).toBe(1);
    resolvers[0]("a");
    await clock.advance(200);
    resolvers[1]?.("b");
    await clock.advance(200);
    expect(maxOpen).toBe(1);
  });

  it("discards stale responses by sequence number", async () => {
    const clock = new FakeClock();
    const resolvers = new Map<number, (v: string) => void>();
    const { requester, applied } = makeRequester(
      clock,
      (req) => new Promise<string>((resolve) => resolvers.set(req, resolve)),
    );
    requester.update(1);
    await clock.advance(200);
    resolvers.get(1)!("first");
    await clock.advance(10);
    requester.update(2);
    await clock.advance(200);
    resolvers.get(2)!("second");
    await clock.advance(10);
    expect(applied).toEqual(["first", "second"]);
  });

  it("reports errors and recovers for later requests", async () => {
    const clock = new FakeClock();
    const errors: unknown[] = [];
    const applied: string[] = [];
    let fail = true;
    const requester = new DebouncedRequester<number, string>(
      async (req) => {
        if (fail) throw new Error("boom");
        return `r${req}`;
      },
      (res) => applied.push(res),
      150,
      clock,
      (err) => errors.push(err),
    );
    requester.update(1);
    await clock.advance(500);
    expect(errors).toHaveLength(1);
    expect(applied).toEqual([]);
    fail = false;
    requester.update(2);
    await clock.advance(500);
    expect(applied).toEqual(["r2"]);
  });
});
