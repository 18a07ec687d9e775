import { ApiClient, ApiError } from "../api.js";
import { showBanner } from "../banner.js";
import type { Navigate } from "../router.js";

function fileInput(id: string, accept: string, labelText: string): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "upload-field";
  const label = document.createElement("label");
  label.htmlFor = id;
  label.textContent = labelText;
  const input = document.createElement("input");
  input.type = "file";
  input.id = id;
  input.accept = accept;
  wrap.append(label, input);
  return wrap;
}

export async function renderHome(
  root: HTMLElement,
  api: ApiClient,
  navigate: Navigate,
): Promise<void> {
  root.replaceChildren();
  const page = document.createElement("div");
  page.className = "page page-home";
  page.innerHTML = `
    <h1>Fine-tune a visual question answering model</h1>
    <section class="card" id="uploader">
      <h2>Data Uploader</h2>
      <div id="upload-banner"></div>
      <p>
        Need something to try? Download the sample dataset:
        <a href="/api/sample-dataset/images.zip" download>images.zip</a> and
        <a href="/api/sample-dataset/qa.csv" download>qa.csv</a>.
      </p>
    </section>
    <section class="card" id="selector">
      <h2>Model Selector</h2>
      <div id="start-banner"></div>
      <label for="model-select">Pre-trained model</label>
      <select id="model-select">
        <option value="">-- select a model --</option>
      </select>
      <button id="start-button" disabled>Start fine-tuning</button>
    </section>
  `;
  root.appendChild(page);

  const uploader = page.querySelector("#uploader") as HTMLElement;
  const imagesField = fileInput("images-file", ".zip", "Images (ZIP)");
  const qaField = fileInput("qa-file", ".csv", "Questions and Answers (CSV)");
  const uploadButton = document.createElement("button");
  uploadButton.id = "upload-button";
  uploadButton.textContent = "Upload dataset";
  uploader.insertBefore(uploadButton, uploader.querySelector("p"));
  uploader.insertBefore(qaField, uploadButton);
  uploader.insertBefore(imagesField, qaField);

  const uploadBanner = page.querySelector("#upload-banner") as HTMLElement;
  const startBanner = page.querySelector("#start-banner") as HTMLElement;
  const modelSelect = page.querySelector("#model-select") as HTMLSelectElement;
  const startButton = page.querySelector("#start-button") as HTMLButtonElement;
  const imagesInput = imagesField.querySelector("input") as HTMLInputElement;
  const qaInput = qaField.querySelector("input") as HTMLInputElement;

  let datasetId: string | null = null;

  const models = await api.listModels();
  for (const model of models) {
    const option = document.createElement("option");
    option.value = model.id;
    option.textContent = model.display_name;
    modelSelect.appendChild(option);
  }

  uploadButton.addEventListener("click", async () => {
    const images = imagesInput.files?.[0];
    const qa = qaInput.files?.[0];
    if (!images || !qa) {
      showBanner(uploadBanner, {
        level: "error",
        messages: ["please choose both an images ZIP and a QA CSV"],
      });
      return;
    }
    uploadButton.disabled = true;
    try {
      const result = await api.uploadDataset(images, qa);
      showBanner(uploadBanner, result.banner);
      datasetId = result.dataset_id;
      // fine-tune controls stay disabled until a dataset exists; a
      // warning-level dataset is still usable
      startButton.disabled = datasetId === null;
    } catch (err) {
      const message = err instanceof ApiError ? err.message : String(err);
      showBanner(uploadBanner, { level: "error", messages: [message] });
    } finally {
      uploadButton.disabled = false;
    }
  });

  startButton.addEventListener("click", async () => {
    try {
      // no client-side validation: the backend's MODEL_NOT_SELECTED
      // answer is the single source of truth
      const { job_id } = await api.startFineTune(modelSelect.value || null, datasetId);
      navigate({ name: "progress", jobId: job_id });
    } catch (err) {
      const message = err instanceof ApiError ? err.message : String(err);
      showBanner(startBanner, { level: "error", messages: [message] });
    }
  });
}
