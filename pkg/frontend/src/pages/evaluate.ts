import { ApiClient, ApiError } from "../api.js";
import { showBanner } from "../banner.js";

function inlineError(container: HTMLElement, err: unknown): void {
  const message = err instanceof ApiError ? err.message : String(err);
  showBanner(container, { level: "error", messages: [message] });
}

function resultBlock(answer: string, probability: number, imageUrl: string): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "eval-result";
  const text = document.createElement("p");
  text.className = "answer-text";
  text.textContent = `Answer: ${answer} (p=${probability.toFixed(3)})`;
  const img = document.createElement("img");
  img.className = "annotated-image";
  img.src = imageUrl;
  img.alt = `annotated regions for answer "${answer}"`;
  wrap.append(text, img);
  return wrap;
}

export async function renderEvaluate(root: HTMLElement, api: ApiClient): Promise<void> {
  root.replaceChildren();
  const page = document.createElement("div");
  page.className = "page page-evaluate";
  page.innerHTML = `
    <h1>Evaluate the fine-tuned model</h1>
    <section class="card panel" id="sample-panel">
      <h2>Sample evaluation</h2>
      <div class="panel-error"></div>
      <img id="sample-image" alt="sample image" />
      <label for="sample-question">Question</label>
      <select id="sample-question"></select>
      <button id="sample-go">Get Answer</button>
      <div class="panel-result"></div>
    </section>
    <div class="panel-row">
      <section class="card panel" id="single-panel">
        <h2>Single evaluation</h2>
        <div class="panel-error"></div>
        <label for="single-image">Image</label>
        <input type="file" id="single-image" accept="image/*" />
        <img id="single-preview" class="preview" alt="" hidden />
        <label for="single-question">Question</label>
        <input type="text" id="single-question" placeholder="what color is the shape?" />
        <button id="single-go">Get Answer</button>
        <div class="panel-result"></div>
      </section>
      <section class="card panel" id="batch-panel">
        <h2>Multiple evaluation</h2>
        <div class="panel-error"></div>
        <p>
          Upload an images ZIP and a questions CSV (columns image_id,
          question), for example the
          <a href="/api/sample-dataset/images.zip" download>sample dataset</a>.
        </p>
        <label for="batch-images">Images (ZIP)</label>
        <input type="file" id="batch-images" accept=".zip" />
        <label for="batch-questions">Questions (CSV)</label>
        <input type="file" id="batch-questions" accept=".csv" />
        <button id="batch-go">Get Answers</button>
        <div class="panel-result"></div>
      </section>
    </div>
  `;
  root.appendChild(page);

  const samplePanel = page.querySelector("#sample-panel") as HTMLElement;
  const sampleError = samplePanel.querySelector(".panel-error") as HTMLElement;
  const sampleResult = samplePanel.querySelector(".panel-result") as HTMLElement;
  const sampleImage = page.querySelector("#sample-image") as HTMLImageElement;
  const sampleQuestion = page.querySelector("#sample-question") as HTMLSelectElement;

  let sampleUrl: string | null = null;
  try {
    const sample = await api.sampleInfo();
    sampleUrl = sample.image_url;
    sampleImage.src = sample.image_url;
    for (const q of sample.questions) {
      const option = document.createElement("option");
      option.value = q;
      option.textContent = q;
      sampleQuestion.appendChild(option);
    }
  } catch (err) {
    inlineError(sampleError, err);
  }

  (page.querySelector("#sample-go") as HTMLButtonElement).addEventListener(
    "click",
    async () => {
      sampleError.replaceChildren();
      if (sampleUrl === null) return;
      try {
        const blob = await api.fetchBlob(sampleUrl);
        const result = await api.evalSingle(blob, sampleQuestion.value);
        sampleResult.replaceChildren(
          resultBlock(result.answer, result.probability, result.annotated_image_url),
        );
      } catch (err) {
        inlineError(sampleError, err);
      }
    },
  );

  const singlePanel = page.querySelector("#single-panel") as HTMLElement;
  const singleError = singlePanel.querySelector(".panel-error") as HTMLElement;
  const singleResult = singlePanel.querySelector(".panel-result") as HTMLElement;
  const singleInput = page.querySelector("#single-image") as HTMLInputElement;
  const singlePreview = page.querySelector("#single-preview") as HTMLImageElement;
  const singleQuestion = page.querySelector("#single-question") as HTMLInputElement;

  singleInput.addEventListener("change", () => {
    const file = singleInput.files?.[0];
    if (file) {
      singlePreview.src = URL.createObjectURL(file);
      singlePreview.hidden = false;
    } else {
      singlePreview.hidden = true;
    }
  });

  (page.querySelector("#single-go") as HTMLButtonElement).addEventListener(
    "click",
    async () => {
      singleError.replaceChildren();
      const file = singleInput.files?.[0];
      if (!file) {
        showBanner(singleError, { level: "error", messages: ["please choose an image"] });
        return;
      }
      try {
        const result = await api.evalSingle(file, singleQuestion.value);
        singleResult.replaceChildren(
          resultBlock(result.answer, result.probability, result.annotated_image_url),
        );
      } catch (err) {
        inlineError(singleError, err);
      }
    },
  );

  const batchPanel = page.querySelector("#batch-panel") as HTMLElement;
  const batchError = batchPanel.querySelector(".panel-error") as HTMLElement;
  const batchResult = batchPanel.querySelector(".panel-result") as HTMLElement;
  const batchImages = page.querySelector("#batch-images") as HTMLInputElement;
  const batchQuestions = page.querySelector("#batch-questions") as HTMLInputElement;

  (page.querySelector("#batch-go") as HTMLButtonElement).addEventListener(
    "click",
    async () => {
      batchError.replaceChildren();
      const images = batchImages.files?.[0];
      const questions = batchQuestions.files?.[0];
      if (!images || !questions) {
        showBanner(batchError, {
          level: "error",
          messages: ["please choose both a ZIP and a CSV"],
        });
        return;
      }
      try {
        const result = await api.evalBatch(images, questions);
        batchResult.replaceChildren();
        const banner = showBanner(batchResult, {
          level: "success",
          messages: [
            `processed ${result.n_processed} entries (${result.n_failed} failed)`,
          ],
        });
        const links = document.createElement("p");
        links.className = "download-links";
        const csvLink = document.createElement("a");
        csvLink.href = result.results_csv_url;
        csvLink.textContent = "Download answers CSV";
        csvLink.setAttribute("download", "");
        const zipLink = document.createElement("a");
        zipLink.href = result.annotated_zip_url;
        zipLink.textContent = "Download annotated images ZIP";
        zipLink.setAttribute("download", "");
        links.append(csvLink, " ", zipLink);
        banner.appendChild(links);
      } catch (err) {
        inlineError(batchError, err);
      }
    },
  );
}
