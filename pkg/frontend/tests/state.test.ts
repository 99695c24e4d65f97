// Panel flow against recorded service exchanges from the trained synthetic
// model: template loading, run-and-compare, and the scripted what-if edit.

import { readFileSync } from "node:fs";
import { join } from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { PanelState, raiseInsulinDose } from "../src/state.js";
import type { PredictRequest, PredictResponse, SchemaDoc, Template } from "../src/types.js";
import { Exchange, deepEqual, hypoProbability, stubFetch } from "./helpers.js";

const FIXTURES = join(import.meta.dirname, "..", "fixtures");

interface WhatIfFixture {
  template_name: string;
  factor: number;
  original_request: PredictRequest;
  original_response: PredictResponse;
  edited_request: PredictRequest;
  edited_response: PredictResponse;
}

let schemaDoc: SchemaDoc;
let templates: Template[];
let whatif: WhatIfFixture;

beforeAll(() => {
  schemaDoc = JSON.parse(readFileSync(join(FIXTURES, "schema.json"), "utf-8"));
  templates = JSON.parse(readFileSync(join(FIXTURES, "templates.json"), "utf-8")).templates;
  whatif = JSON.parse(readFileSync(join(FIXTURES, "whatif.json"), "utf-8"));
});

function panelWith(exchanges: Exchange[]): PanelState {
  const api = new ApiClient("http://stub", stubFetch({ schema: schemaDoc, templates, exchanges }));
  return new PanelState(api, schemaDoc);
}

describe("template loading", () => {
  it("serves exactly the six advertised confusion cells", () => {
    expect(templates).toHaveLength(6);
    const names = templates.map((t) => t.name).sort();
    expect(names).toEqual(
      [
        "hyper_false_negative",
        "hyper_false_positive",
        "hyper_true_positive",
        "hypo_false_negative",
        "hypo_false_positive",
        "hypo_true_positive",
      ].sort(),
    );
  });

  it("populates every tab and clears the dirty flag", () => {
    const state = panelWith([]);
    state.loadTemplate(templates[0]);
    expect(state.dirty).toBe(false);
    expect(state.templateName).toBe(templates[0].name);
    for (const [source, rows] of Object.entries(templates[0].request.sources)) {
      expect(state.records.get(source)).toHaveLength(rows.length);
    }
    expect(deepEqual(state.toRequest(), templates[0].request)).toBe(true);
  });

  it("loading a second template fully replaces the first", () => {
    const state = panelWith([]);
    state.loadTemplate(templates[0]);
    state.loadTemplate(templates[1]);
    expect(deepEqual(state.toRequest(), templates[1].request)).toBe(true);
    expect(state.templateName).toBe(templates[1].name);
  });
});

describe("run prediction", () => {
  it("reproduces every template's stored prediction", async () => {
    const exchanges = templates.map((t) => ({ request: t.request, response: t.stored_prediction }));
    for (const template of templates) {
      const state = panelWith(exchanges);
      state.loadTemplate(template);
      const snapshot = await state.run();
      expect(snapshot.banner).toBeNull();
      expect(snapshot.current?.predicted_class).toBe(template.stored_prediction.predicted_class);
      expect(deepEqual(snapshot.current, template.stored_prediction)).toBe(true);
    }
  });

  it("probabilities displayed sum to 100% within rounding", async () => {
    const exchanges = templates.map((t) => ({ request: t.request, response: t.stored_prediction }));
    const state = panelWith(exchanges);
    state.loadTemplate(templates[0]);
    const snapshot = await state.run();
    const total = snapshot.current!.probabilities.reduce((a, b) => a + b, 0);
    expect(Math.abs(total - 1.0)).toBeLessThanOrEqual(1e-6);
  });

  it("two consecutive identical runs display identically", async () => {
    const exchanges = templates.map((t) => ({ request: t.request, response: t.stored_prediction }));
    const state = panelWith(exchanges);
    state.loadTemplate(templates[0]);
    const first = await state.run();
    const second = await state.run();
    expect(deepEqual(first.current, second.current)).toBe(true);
  });

  it("arity-mismatch input is blocked before any request is sent", async () => {
    let posted = 0;
    const api = new ApiClient(
      "http://stub",
      (async (url: RequestInfo | URL, init?: RequestInit) => {
        if (String(url).endsWith("/predict")) posted += 1;
        return new Response("{}", { status: 200 });
      }) as typeof fetch,
    );
    const state = new PanelState(api, schemaDoc);
    // series entry with mismatched arity never reaches the form, so emulate
    // a direct bad record (negative offset) slipping in
    state.setRecords("vitals", [
      { offset_minutes: -4, values: { heart_rate: 80, spo2: 97, context: "routine" } },
    ]);
    const snapshot = await state.run();
    expect(snapshot.errors.length).toBeGreaterThan(0);
    expect(posted).toBe(0);
  });

  it("surfaces server field diagnostics on a 400", async () => {
    const state = panelWith([]); // no exchanges: stub answers 400 with a field
    state.loadTemplate(templates[0]);
    state.editNumeric(
      Object.keys(templates[0].request.sources)[0],
      0,
      schemaDoc.sources.find((s) =>
        Object.keys(templates[0].request.sources).includes(s.source_name),
      )!.numeric_features[0] ?? "",
      1,
    );
    const snapshot = await state.run();
    expect(snapshot.banner).not.toBeNull();
  });
});

describe("what-if editing", () => {
  it("raising the planted insulin-like dose does not decrease the hypo probability", async () => {
    const template = templates.find((t) => t.name === whatif.template_name)!;
    const exchanges = [
      { request: whatif.original_request, response: whatif.original_response },
      { request: whatif.edited_request, response: whatif.edited_response },
    ];
    const state = panelWith(exchanges);
    state.loadTemplate(template);
    const before = await state.run();
    expect(before.current).not.toBeNull();

    const edit = raiseInsulinDose(state, whatif.factor);
    expect(edit.after).toBeGreaterThan(edit.before);
    // the panel's edit must reproduce the recorded edited request exactly
    expect(deepEqual(state.toRequest(), whatif.edited_request)).toBe(true);

    const after = await state.run();
    expect(after.previous).not.toBeNull();
    expect(hypoProbability(after.current!)).toBeGreaterThanOrEqual(
      hypoProbability(after.previous!),
    );
  });

  it("editing then reverting returns the prior prediction bitwise", async () => {
    const template = templates.find((t) => t.name === whatif.template_name)!;
    const exchanges = [
      { request: whatif.original_request, response: whatif.original_response },
      { request: whatif.edited_request, response: whatif.edited_response },
    ];
    const state = panelWith(exchanges);
    state.loadTemplate(template);
    const first = await state.run();

    const edit = raiseInsulinDose(state, whatif.factor);
    await state.run();
    state.editNumeric(edit.source, edit.index, edit.feature, edit.before);
    const reverted = await state.run();
    expect(deepEqual(reverted.current, first.current)).toBe(true);
  });

  it("what-if runs keep previous and current side by side", async () => {
    const template = templates.find((t) => t.name === whatif.template_name)!;
    const exchanges = [
      { request: whatif.original_request, response: whatif.original_response },
      { request: whatif.edited_request, response: whatif.edited_response },
    ];
    const state = panelWith(exchanges);
    state.loadTemplate(template);
    await state.run();
    raiseInsulinDose(state, whatif.factor);
    const snapshot = await state.run();
    expect(snapshot.previous?.predicted_class).toBe(whatif.original_response.predicted_class);
    expect(snapshot.current?.predicted_class).toBe(whatif.edited_response.predicted_class);
  });
});
