// Panel state machine, deliberately DOM-free so the what-if flow is
// testable headless. The panel does no inference math: predictions shown
// are verbatim service responses, kept side by side with the previous one
// so an edit's effect is immediately comparable.

import { ApiClient } from "./api.js";
import type {
  PredictRequest,
  PredictResponse,
  RequestRecord,
  SchemaDoc,
  Template,
  FieldError,
} from "./types.js";
import { validateRecords } from "./validate.js";

export interface PanelSnapshot {
  templateName: string | null;
  dirty: boolean;
  current: PredictResponse | null;
  previous: PredictResponse | null;
  errors: FieldError[];
  banner: string | null;
}

export class PanelState {
  readonly records: Map<string, RequestRecord[]> = new Map();
  templateName: string | null = null;
  dirty = false;
  current: PredictResponse | null = null;
  previous: PredictResponse | null = null;
  errors: FieldError[] = [];
  banner: string | null = null;

  constructor(
    private api: ApiClient,
    public doc: SchemaDoc,
  ) {
    for (const schema of doc.sources) this.records.set(schema.source_name, []);
  }

  /** Populate every tab from a template, replacing prior content entirely. */
  loadTemplate(template: Template): void {
    for (const schema of this.doc.sources) {
      const rows = template.request.sources[schema.source_name] ?? [];
      this.records.set(
        schema.source_name,
        rows.map((r) => ({
          offset_minutes: r.offset_minutes,
          values: { ...r.values },
          ...(r.stop_offset_minutes != null ? { stop_offset_minutes: r.stop_offset_minutes } : {}),
        })),
      );
    }
    this.templateName = template.name;
    this.dirty = false;
    this.errors = [];
    this.current = null;
    this.previous = null;
    this.banner = null;
  }

  setRecords(sourceName: string, rows: RequestRecord[]): void {
    if (!this.records.has(sourceName)) {
      throw new Error(`unknown source ${sourceName}`);
    }
    this.records.set(sourceName, rows);
    this.dirty = true;
  }

  /** Point edit of one numeric field; marks the form dirty. */
  editNumeric(sourceName: string, index: number, feature: string, value: number): void {
    const rows = this.records.get(sourceName);
    if (!rows || !rows[index]) throw new Error(`no record ${sourceName}[${index}]`);
    rows[index].values[feature] = value;
    this.dirty = true;
  }

  toRequest(): PredictRequest {
    const sources: PredictRequest["sources"] = {};
    for (const schema of this.doc.sources) {
      const rows = this.records.get(schema.source_name) ?? [];
      if (rows.length > 0) sources[schema.source_name] = rows;
    }
    return { sources };
  }

  validate(): FieldError[] {
    const errors: FieldError[] = [];
    for (const schema of this.doc.sources) {
      errors.push(...validateRecords(this.doc, schema, this.records.get(schema.source_name) ?? []));
    }
    return errors;
  }

  /** Validate client-side, POST to the service, rotate previous/current. */
  async run(): Promise<PanelSnapshot> {
    this.errors = this.validate();
    if (this.errors.length > 0) {
      return this.snapshot();
    }
    try {
      const response = await this.api.predict(this.toRequest());
      this.previous = this.current;
      this.current = response;
      this.banner = null;
      this.dirty = false;
    } catch (error) {
      if (error instanceof Error && "fields" in error) {
        this.errors = (error as { fields: FieldError[] }).fields;
      }
      this.banner = error instanceof Error ? error.message : String(error);
    }
    return this.snapshot();
  }

  snapshot(): PanelSnapshot {
    return {
      templateName: this.templateName,
      dirty: this.dirty,
      current: this.current,
      previous: this.previous,
      errors: [...this.errors],
      banner: this.banner,
    };
  }
}

/** The scripted what-if probe: scale the freshest insulin-like dose on the
 * loaded form, capped at the served upper bound for that feature. Returns
 * the edit target so callers can display or assert on it. */
export function raiseInsulinDose(
  state: PanelState,
  factor = 3.0,
): { source: string; index: number; feature: string; before: number; after: number } {
  for (const schema of state.doc.sources) {
    const doseFeature = schema.numeric_features.find((f) => f === "dose");
    if (!doseFeature) continue;
    const drugFeature = schema.categorical_features.find((c) => c.name === "drug");
    const rows = state.records.get(schema.source_name) ?? [];
    let best = -1;
    for (let i = 0; i < rows.length; i++) {
      const drug = drugFeature ? String(rows[i].values[drugFeature.name] ?? "") : "";
      if (!drug.startsWith("insulin")) continue;
      if (best < 0 || rows[i].offset_minutes > rows[best].offset_minutes) best = i;
    }
    if (best < 0) continue;
    const before = Number(rows[best].values[doseFeature] ?? 0);
    const bounds = state.doc.bounds[schema.source_name]?.[doseFeature]?.[""];
    let after = before * factor;
    if (bounds) after = Math.min(after, bounds.high);
    state.editNumeric(schema.source_name, best, doseFeature, after);
    return { source: schema.source_name, index: best, feature: doseFeature, before, after };
  }
  throw new Error("no insulin-like administration on the form to raise");
}
