import { ApiClient } from "./api.js";
import { renderEvaluate } from "./pages/evaluate.js";
import { renderHome } from "./pages/home.js";
import { renderProgress, type ProgressHandle } from "./pages/progress.js";
import { parseRoute, routeHash, type Route } from "./router.js";

const api = new ApiClient();
const root = document.getElementById("app") as HTMLElement;

let activePoll: ProgressHandle | null = null;

function navigate(route: Route): void {
  window.location.hash = routeHash(route);
}

function render(): void {
  // cancel any in-flight poll loop before leaving the progress page
  if (activePoll) {
    activePoll.stop();
    activePoll = null;
  }
  const route = parseRoute(window.location.hash);
  if (route.name === "progress") {
    activePoll = renderProgress(root, api, navigate, route.jobId);
  } else if (route.name === "evaluate") {
    void renderEvaluate(root, api);
  } else {
    void renderHome(root, api, navigate);
  }
}

window.addEventListener("hashchange", render);
render();
