// Boot: fetch the schema and templates, build the panel, wire the run loop.

import { ApiClient } from "./api.js";
import { Panel } from "./render.js";
import { PanelState } from "./state.js";

const SERVICE_URL =
  new URLSearchParams(window.location.search).get("service") ?? "http://127.0.0.1:8000";

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const api = new ApiClient(SERVICE_URL);
  try {
    const health = await api.health();
    if (health.status !== "ready") throw new Error("service not ready");
  } catch (error) {
    root.textContent = `service unreachable at ${SERVICE_URL}: ${String(error)}`;
    return;
  }
  const doc = await api.schema();
  const templates = await api.templates();
  const state = new PanelState(api, doc);
  const panel = new Panel(root, state, templates, async () => {
    panel.render(await state.run());
  });
  panel.mount();
}

boot();
