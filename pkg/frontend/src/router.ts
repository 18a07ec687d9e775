/** Hash-based routes: #/ (home), #/progress/:job, #/evaluate. */

export type Route =
  | { name: "home" }
  | { name: "progress"; jobId: string }
  | { name: "evaluate" };

export function parseRoute(hash: string): Route {
  const path = hash.replace(/^#/, "");
  const progress = path.match(/^\/progress\/([^/]+)$/);
  if (progress) {
    return { name: "progress", jobId: decodeURIComponent(progress[1]) };
  }
  if (path === "/evaluate") {
    return { name: "evaluate" };
  }
  return { name: "home" };
}

export function routeHash(route: Route): string {
  switch (route.name) {
    case "home":
      return "#/";
    case "progress":
      return `#/progress/${encodeURIComponent(route.jobId)}`;
    case "evaluate":
      return "#/evaluate";
  }
}

export type Navigate = (route: Route) => void;
