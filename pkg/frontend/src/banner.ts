import type { Banner, BannerLevel } from "./api.js";

const LABELS: Record<BannerLevel, string> = {
  error: "Error",
  warning: "Warning",
  success: "Success",
};

/** Render a banner keyed strictly by level; the text label keeps it
 * readable without relying on color alone. */
export function renderBanner(banner: Banner, dismissible = true): HTMLElement {
  const el = document.createElement("div");
  el.className = `banner banner-${banner.level}`;
  el.setAttribute("role", banner.level === "error" ? "alert" : "status");

  const label = document.createElement("strong");
  label.className = "banner-label";
  label.textContent = LABELS[banner.level];
  el.appendChild(label);

  const list = document.createElement("ul");
  for (const message of banner.messages) {
    const item = document.createElement("li");
    item.textContent = message;
    list.appendChild(item);
  }
  el.appendChild(list);

  if (dismissible) {
    const close = document.createElement("button");
    close.className = "banner-dismiss";
    close.textContent = "×";
    close.addEventListener("click", () => el.remove());
    el.appendChild(close);
  }
  return el;
}

/** Replace whatever banner a container currently shows. */
export function showBanner(container: HTMLElement, banner: Banner): HTMLElement {
  container.replaceChildren();
  const el = renderBanner(banner);
  container.appendChild(el);
  return el;
}
