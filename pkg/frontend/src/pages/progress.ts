import { ApiClient } from "../api.js";
import { showBanner } from "../banner.js";
import type { Navigate } from "../router.js";

const TERMINAL_STATES = new Set(["done", "failed"]);
const MAX_CONSECUTIVE_FAILURES = 5;

export interface ProgressHandle {
  stop(): void;
}

export function renderProgress(
  root: HTMLElement,
  api: ApiClient,
  navigate: Navigate,
  jobId: string,
  pollIntervalMs = 1000,
): ProgressHandle {
  root.replaceChildren();
  const page = document.createElement("div");
  page.className = "page page-progress";
  page.innerHTML = `
    <h1>Fine-tuning in progress</h1>
    <div id="progress-banner"></div>
    <div class="progress-track">
      <div class="progress-bar" id="progress-bar" style="width: 0%"></div>
    </div>
    <p id="progress-detail">starting…</p>
  `;
  root.appendChild(page);

  const banner = page.querySelector("#progress-banner") as HTMLElement;
  const bar = page.querySelector("#progress-bar") as HTMLElement;
  const detail = page.querySelector("#progress-detail") as HTMLElement;

  let stopped = false;
  let timer: ReturnType<typeof setTimeout> | null = null;
  let failures = 0;

  const stop = () => {
    stopped = true;
    if (timer !== null) clearTimeout(timer);
  };

  const tick = async () => {
    if (stopped) return;
    try {
      const snap = await api.jobStatus(jobId);
      failures = 0;
      const percent = Math.round(snap.progress * 100);
      bar.style.width = `${percent}%`;
      const loss =
        snap.latest_loss == null ? "" : `, loss ${snap.latest_loss.toFixed(4)}`;
      detail.textContent = `${snap.state} — ${percent}%${loss}`;
      if (snap.state === "done") {
        stop();
        navigate({ name: "evaluate" });
        return;
      }
      if (snap.state === "failed") {
        stop();
        showBanner(banner, {
          level: "error",
          messages: [snap.message ?? "fine-tuning failed"],
        });
        return;
      }
    } catch (err) {
      failures += 1;
      if (failures >= MAX_CONSECUTIVE_FAILURES) {
        stop();
        showBanner(banner, {
          level: "error",
          messages: [`lost contact with the server: ${String(err)}`],
        });
        return;
      }
    }
    if (!stopped) {
      // back off while the server is unreachable
      timer = setTimeout(tick, pollIntervalMs * 2 ** failures);
    }
  };

  void tick();
  return { stop };
}

export { TERMINAL_STATES };
