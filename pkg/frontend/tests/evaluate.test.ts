import { describe, expect, it } from "vitest";

import { renderEvaluate } from "../src/pages/evaluate.js";
import { clientFor, flush, json, setFiles } from "./helpers.js";

const SAMPLE = {
  image_id: "blue_circle",
  image_url: "/files/sample/blue_circle.png",
  questions: ["what color is the shape?", "what shape is in the image?"],
};

function setup(extraHandlers = {}) {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app") as HTMLElement;
  const { api, calls } = clientFor({
    "GET /api/sample": () => json(200, SAMPLE),
    "GET /files/sample/blue_circle.png": () =>
      new Response(new Blob([new Uint8Array([1, 2, 3])]), { status: 200 }),
    ...extraHandlers,
  });
  return { root, api, calls };
}

describe("evaluation page", () => {
  it("renders all three panels with the sample question drop-down", async () => {
    const { root, api } = setup();
    await renderEvaluate(root, api);
    expect(root.querySelector("#sample-panel")).toBeTruthy();
    expect(root.querySelector("#single-panel")).toBeTruthy();
    expect(root.querySelector("#batch-panel")).toBeTruthy();
    const options = root.querySelectorAll("#sample-question option");
    expect([...options].map((o) => o.textContent)).toEqual(SAMPLE.questions);
    expect((root.querySelector("#sample-image") as HTMLImageElement).src).toContain(
      "blue_circle.png",
    );
  });

  it("sample panel shows the answer text and annotated image", async () => {
    const { root, api } = setup({
      "POST /api/eval/single": () =>
        json(200, {
          answer: "blue",
          probability: 0.91,
          annotated_image_url: "/files/results/out.png",
        }),
    });
    await renderEvaluate(root, api);
    (root.querySelector("#sample-go") as HTMLButtonElement).click();
    await flush();
    const answer = root.querySelector("#sample-panel .answer-text") as HTMLElement;
    expect(answer.textContent).toContain("blue");
    const img = root.querySelector("#sample-panel .annotated-image") as HTMLImageElement;
    expect(img.src).toContain("/files/results/out.png");
  });

  it("single panel uploads the chosen file and renders the result", async () => {
    const { root, api } = setup({
      "POST /api/eval/single": () =>
        json(200, {
          answer: "circle",
          probability: 0.8,
          annotated_image_url: "/files/results/one.png",
        }),
    });
    await renderEvaluate(root, api);
    setFiles(root.querySelector("#single-image") as HTMLInputElement, [
      new File([new Blob(["x"])], "pic.png"),
    ]);
    (root.querySelector("#single-question") as HTMLInputElement).value = "what shape?";
    (root.querySelector("#single-go") as HTMLButtonElement).click();
    await flush();
    const answer = root.querySelector("#single-panel .answer-text") as HTMLElement;
    expect(answer.textContent).toContain("circle");
  });

  it("batch panel shows a green banner with both download links", async () => {
    const { root, api } = setup({
      "POST /api/eval/batch": () =>
        json(200, {
          results_csv_url: "/files/results/e1/results.csv",
          annotated_zip_url: "/files/results/e1/annotated.zip",
          n_processed: 10,
          n_failed: 0,
        }),
    });
    await renderEvaluate(root, api);
    setFiles(root.querySelector("#batch-images") as HTMLInputElement, [
      new File([new Blob(["z"])], "images.zip"),
    ]);
    setFiles(root.querySelector("#batch-questions") as HTMLInputElement, [
      new File([new Blob(["c"])], "questions.csv"),
    ]);
    (root.querySelector("#batch-go") as HTMLButtonElement).click();
    await flush();
    const banner = root.querySelector("#batch-panel .banner") as HTMLElement;
    expect(banner.className).toContain("banner-success");
    expect(banner.textContent).toContain("processed 10");
    const hrefs = [...banner.querySelectorAll("a")].map((a) => a.getAttribute("href"));
    expect(hrefs).toEqual([
      "/files/results/e1/results.csv",
      "/files/results/e1/annotated.zip",
    ]);
  });

  it("maps MODEL_NOT_READY to an inline red error", async () => {
    const { root, api } = setup({
      "POST /api/eval/single": () =>
        json(404, {
          code: "MODEL_NOT_READY",
          http_status: 404,
          message: "no fine-tuned model is available yet",
        }),
    });
    await renderEvaluate(root, api);
    (root.querySelector("#sample-go") as HTMLButtonElement).click();
    await flush();
    const banner = root.querySelector("#sample-panel .panel-error .banner") as HTMLElement;
    expect(banner.className).toContain("banner-error");
    expect(banner.textContent).toContain("no fine-tuned model");
  });

  it("batch failure renders the backend message verbatim", async () => {
    const { root, api } = setup({
      "POST /api/eval/batch": () =>
        json(422, {
          code: "NO_VALID_ENTRIES",
          http_status: 422,
          message: "no valid image or question entry in the dataset",
        }),
    });
    await renderEvaluate(root, api);
    setFiles(root.querySelector("#batch-images") as HTMLInputElement, [
      new File([new Blob(["z"])], "images.zip"),
    ]);
    setFiles(root.querySelector("#batch-questions") as HTMLInputElement, [
      new File([new Blob(["c"])], "questions.csv"),
    ]);
    (root.querySelector("#batch-go") as HTMLButtonElement).click();
    await flush();
    const banner = root.querySelector("#batch-panel .panel-error .banner") as HTMLElement;
    expect(banner.textContent).toContain("no valid image or question entry");
  });
});
