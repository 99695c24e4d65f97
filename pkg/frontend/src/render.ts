// DOM layer: source tabs, record editors, and the prediction panels. All
// numbers rendered here are fields of service responses or user inputs.

import type { PanelSnapshot, PanelState } from "./state.js";
import type { PredictResponse, RequestRecord, SourceSchema, Template } from "./types.js";
import { validateSeriesEntry } from "./validate.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function isSeriesStyle(schema: SourceSchema): boolean {
  return (
    schema.numeric_features.length > 0 &&
    schema.dimension_feature == null &&
    schema.frequency_feature == null &&
    schema.categorical_features.length <= 1
  );
}

export class Panel {
  private tabBar = el("div", "tab-bar");
  private tabBodies = new Map<string, HTMLElement>();
  private activeTab: string | null = null;
  private resultBox = el("div", "results");
  private bannerBox = el("div", "banner");
  private seriesInputs = new Map<string, { offsets: HTMLTextAreaElement; values: Map<string, HTMLTextAreaElement> }>();

  constructor(
    private root: HTMLElement,
    private state: PanelState,
    private templates: Template[],
    private onRun: () => void,
  ) {}

  mount(): void {
    this.root.innerHTML = "";
    const header = el("div", "header");
    header.appendChild(el("h1", undefined, "what-if glucose-class panel"));

    const templateBar = el("div", "template-bar");
    for (const template of this.templates) {
      const button = el("button", "template", template.name.replace(/_/g, " "));
      button.addEventListener("click", () => {
        this.state.loadTemplate(template);
        this.refreshTabs();
        this.render(this.state.snapshot());
      });
      templateBar.appendChild(button);
    }
    const runButton = el("button", "run", "Run model");
    runButton.addEventListener("click", () => this.onRun());

    this.root.append(header, templateBar, this.tabBar, el("div", "tab-area"), runButton, this.bannerBox, this.resultBox);
    this.refreshTabs();
  }

  refreshTabs(): void {
    this.tabBar.innerHTML = "";
    const area = this.root.querySelector(".tab-area") as HTMLElement;
    area.innerHTML = "";
    this.tabBodies.clear();
    this.seriesInputs.clear();
    for (const schema of this.state.doc.sources) {
      const name = schema.source_name;
      const tab = el("button", "tab", name);
      tab.addEventListener("click", () => this.showTab(name));
      this.tabBar.appendChild(tab);
      const body = el("div", "tab-body");
      body.style.display = "none";
      this.renderSourceEditor(schema, body);
      area.appendChild(body);
      this.tabBodies.set(name, body);
    }
    this.showTab(this.activeTab ?? this.state.doc.sources[0]?.source_name ?? null);
  }

  private showTab(name: string | null): void {
    if (!name) return;
    this.activeTab = name;
    for (const [tabName, body] of this.tabBodies) {
      body.style.display = tabName === name ? "block" : "none";
    }
  }

  private renderSourceEditor(schema: SourceSchema, body: HTMLElement): void {
    const rows = this.state.records.get(schema.source_name) ?? [];
    if (isSeriesStyle(schema)) {
      this.renderSeriesEditor(schema, body, rows);
      return;
    }
    const table = el("table", "records");
    const head = el("tr");
    head.appendChild(el("th", undefined, "offset (min)"));
    for (const f of schema.numeric_features) head.appendChild(el("th", undefined, f));
    for (const c of schema.categorical_features) head.appendChild(el("th", undefined, c.name));
    table.appendChild(head);

    rows.forEach((record, index) => {
      const tr = el("tr");
      const offsetInput = el("input") as HTMLInputElement;
      offsetInput.value = String(record.offset_minutes);
      offsetInput.addEventListener("change", () => {
        record.offset_minutes = Number(offsetInput.value);
        this.state.setRecords(schema.source_name, rows);
      });
      tr.appendChild(el("td")).appendChild(offsetInput);

      for (const feature of schema.numeric_features) {
        const input = el("input") as HTMLInputElement;
        input.dataset.field = `${schema.source_name}[${index}].${feature}`;
        const value = record.values[feature];
        input.value = value == null ? "" : String(value);
        input.addEventListener("change", () => {
          const parsed = input.value.trim() === "" ? null : Number(input.value);
          record.values[feature] = parsed;
          this.state.setRecords(schema.source_name, rows);
        });
        tr.appendChild(el("td")).appendChild(input);
      }
      for (const cat of schema.categorical_features) {
        const select = el("select") as HTMLSelectElement;
        for (const option of cat.categories) {
          const opt = el("option", undefined, option) as HTMLOptionElement;
          opt.value = option;
          select.appendChild(opt);
        }
        select.value = String(record.values[cat.name] ?? "unknown");
        select.addEventListener("change", () => {
          record.values[cat.name] = select.value;
          this.state.setRecords(schema.source_name, rows);
        });
        tr.appendChild(el("td")).appendChild(select);
      }
      table.appendChild(tr);
    });

    const addButton = el("button", "add-record", "+ record");
    addButton.addEventListener("click", () => {
      const values: RequestRecord["values"] = {};
      for (const f of schema.numeric_features) values[f] = null;
      for (const c of schema.categorical_features) values[c.name] = "unknown";
      rows.push({ offset_minutes: 0, values });
      this.state.setRecords(schema.source_name, rows);
      this.refreshTabs();
    });
    body.append(table, addButton);
  }

  private renderSeriesEditor(schema: SourceSchema, body: HTMLElement, rows: RequestRecord[]): void {
    const offsets = el("textarea") as HTMLTextAreaElement;
    offsets.value = rows.map((r) => r.offset_minutes).join(", ");
    const valueAreas = new Map<string, HTMLTextAreaElement>();
    const container = el("div", "series-editor");
    container.appendChild(el("label", undefined, "offsets (comma separated minutes)"));
    container.appendChild(offsets);
    for (const feature of schema.numeric_features) {
      container.appendChild(el("label", undefined, feature));
      const area = el("textarea") as HTMLTextAreaElement;
      area.value = rows.map((r) => String(r.values[feature] ?? "")).join(", ");
      valueAreas.set(feature, area);
      container.appendChild(area);
    }
    const apply = el("button", "apply-series", "apply series");
    const errorBox = el("div", "field-errors");
    apply.addEventListener("click", () => {
      const texts: { [f: string]: string } = {};
      for (const [feature, area] of valueAreas) texts[feature] = area.value;
      const { records, errors } = validateSeriesEntry(schema, offsets.value, texts);
      errorBox.innerHTML = "";
      if (errors.length > 0) {
        for (const err of errors) errorBox.appendChild(el("div", "field-error", err.message));
        return; // blocked client-side
      }
      this.state.setRecords(schema.source_name, records);
    });
    container.append(apply, errorBox);
    body.appendChild(container);
    this.seriesInputs.set(schema.source_name, { offsets, values: valueAreas });
  }

  render(snapshot: PanelSnapshot): void {
    this.bannerBox.innerHTML = "";
    if (snapshot.banner) {
      this.bannerBox.appendChild(el("div", "error-banner", snapshot.banner));
    }
    for (const err of snapshot.errors) {
      this.bannerBox.appendChild(el("div", "field-error", `${err.field}: ${err.message}`));
      const input = this.root.querySelector(`[data-field="${err.field}"]`);
      if (input) (input as HTMLElement).classList.add("invalid");
    }
    this.resultBox.innerHTML = "";
    if (snapshot.previous) {
      this.resultBox.appendChild(this.renderPrediction("previous run", snapshot.previous));
    }
    if (snapshot.current) {
      this.resultBox.appendChild(this.renderPrediction("current run", snapshot.current));
    }
  }

  private renderPrediction(title: string, response: PredictResponse): HTMLElement {
    const box = el("div", "prediction");
    box.appendChild(el("h2", undefined, title));
    box.appendChild(el("div", "predicted-class", `predicted: ${response.predicted_class}`));
    const bars = el("div", "probability-bars");
    response.class_names.forEach((name, i) => {
      const row = el("div", "bar-row");
      row.appendChild(el("span", "bar-label", `${name} ${(response.probabilities[i] * 100).toFixed(1)}%`));
      const bar = el("div", "bar");
      bar.style.width = `${(response.probabilities[i] * 100).toFixed(1)}%`;
      row.appendChild(bar);
      bars.appendChild(row);
    });
    box.appendChild(bars);
    const weights = el("div", "fusion-weights");
    weights.appendChild(el("h3", undefined, "per-source contribution"));
    for (const [source, weight] of Object.entries(response.fusion_weights)) {
      const row = el("div", "bar-row");
      row.appendChild(el("span", "bar-label", `${source} ${(weight * 100).toFixed(1)}%`));
      const bar = el("div", "bar weight");
      bar.style.width = `${(weight * 100).toFixed(1)}%`;
      row.appendChild(bar);
      weights.appendChild(row);
    }
    box.appendChild(weights);
    return box;
  }
}
