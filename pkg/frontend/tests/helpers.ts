import { ApiClient } from "../src/api.js";

export type Handler = (init?: RequestInit) => Response | Promise<Response>;

export function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** fetch stub routed by "METHOD path"; records every call it sees. */
export function makeFetch(handlers: Record<string, Handler>) {
  const calls: string[] = [];
  const fetchImpl = async (input: string, init?: RequestInit): Promise<Response> => {
    const key = `${init?.method ?? "GET"} ${input}`;
    calls.push(key);
    const handler = handlers[key];
    if (!handler) {
      return json(404, { code: "FILE_NOT_FOUND", message: `no handler for ${key}` });
    }
    return handler(init);
  };
  return { fetchImpl, calls };
}

export function clientFor(handlers: Record<string, Handler>) {
  const { fetchImpl, calls } = makeFetch(handlers);
  return { api: new ApiClient(fetchImpl), calls };
}

/** Assign a File to an <input type=file>; happy-dom has no DataTransfer. */
export function setFiles(input: HTMLInputElement, files: File[]): void {
  const fileList = {
    length: files.length,
    item: (i: number) => files[i] ?? null,
    ...Object.fromEntries(files.map((f, i) => [i, f])),
  };
  Object.defineProperty(input, "files", { value: fileList, configurable: true });
}

export function flush(ms = 0): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export const MODELS = [
  {
    id: "visualbert",
    display_name: "VisualBERT-style (single-stream)",
    architecture: "single_stream",
    defaults: {},
  },
  {
    id: "lxmert",
    display_name: "LXMERT-style (dual-stream)",
    architecture: "dual_stream",
    defaults: {},
  },
];
