// Polling loop with reconnect backoff. The service pushes nothing; while a
// job runs the UI re-reads its state and latest contour a few times per
// second. On network loss the loop stays alive, backs off, and resyncs as
// soon as a tick succeeds again.

export const POLL_INTERVAL_MS = 400; // 2.5 Hz
const BACKOFF_MAX_MS = 5000;

export class Poller {
  online = true;

  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = true;
  private delay: number;

  constructor(
    private readonly tick: () => Promise<void>,
    private readonly interval: number = POLL_INTERVAL_MS,
  ) {
    this.delay = interval;
  }

  get running(): boolean {
    return !this.stopped;
  }

  start(): void {
    if (!this.stopped) return;
    this.stopped = false;
    this.delay = this.interval;
    this.schedule(0);
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private schedule(ms: number): void {
    if (this.stopped) return;
    this.timer = setTimeout(() => void this.step(), ms);
  }

  private async step(): Promise<void> {
    try {
      await this.tick();
      this.online = true;
      this.delay = this.interval;
    } catch {
      this.online = false;
      this.delay = Math.min(this.delay * 2, BACKOFF_MAX_MS);
    }
    this.schedule(this.delay);
  }
}
