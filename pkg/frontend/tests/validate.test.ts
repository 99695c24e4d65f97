import { describe, expect, it } from "vitest";

import { parseCommaSeparated, validateRecords, validateSeriesEntry } from "../src/validate.js";
import type { SchemaDoc, SourceSchema } from "../src/types.js";

const vitals: SourceSchema = {
  source_id: 2,
  source_name: "vitals",
  numeric_features: ["heart_rate", "spo2"],
  categorical_features: [{ name: "context", categories: ["routine", "alarm", "unknown", "absent-source"] }],
  dimension_feature: null,
  frequency_feature: null,
};

const doc: SchemaDoc = {
  class_names: ["hypo", "euglycemia", "hyper"],
  sources: [vitals],
  bounds: { vitals: { heart_rate: { "": { low: 40, high: 140 } } } },
  model_hash: "x",
};

describe("parseCommaSeparated", () => {
  it("parses numbers and trims whitespace", () => {
    expect(parseCommaSeparated(" 1, 2.5 ,3 ")).toEqual([1, 2.5, 3]);
  });
  it("empty text is an empty series", () => {
    expect(parseCommaSeparated("  ")).toEqual([]);
  });
});

describe("validateSeriesEntry", () => {
  it("accepts matched arities and builds records", () => {
    const { records, errors } = validateSeriesEntry(vitals, "0, 10, 20", {
      heart_rate: "70, 72, 75",
      spo2: "97, 96, 98",
    });
    expect(errors).toEqual([]);
    expect(records).toHaveLength(3);
    expect(records[1]).toMatchObject({
      offset_minutes: 10,
      values: { heart_rate: 72, spo2: 96, context: null },
    });
  });

  it("blocks an arity mismatch (5 values, 4 offsets) client-side", () => {
    const { records, errors } = validateSeriesEntry(vitals, "0, 10, 20, 30", {
      heart_rate: "70, 72, 75, 74, 73",
      spo2: "97, 96, 98, 95",
    });
    expect(records).toEqual([]);
    expect(errors.some((e) => e.field === "vitals.heart_rate")).toBe(true);
    expect(errors[0].message).toContain("5 values for 4 offsets");
  });

  it("rejects non-numeric and negative offsets", () => {
    const bad = validateSeriesEntry(vitals, "0, -5", { heart_rate: "70, 71", spo2: "97, 97" });
    expect(bad.errors.some((e) => e.message.includes(">= 0"))).toBe(true);
    const nonNumeric = validateSeriesEntry(vitals, "0, ten", { heart_rate: "70, 71", spo2: "97, 97" });
    expect(nonNumeric.errors.length).toBeGreaterThan(0);
  });
});

describe("validateRecords", () => {
  it("flags values outside the served bounds", () => {
    const errors = validateRecords(doc, vitals, [
      { offset_minutes: 5, values: { heart_rate: 500, spo2: 97, context: "routine" } },
    ]);
    expect(errors).toHaveLength(1);
    expect(errors[0].field).toBe("vitals[0].heart_rate");
    expect(errors[0].message).toContain("outside");
  });

  it("accepts in-bounds records and nulls", () => {
    const errors = validateRecords(doc, vitals, [
      { offset_minutes: 5, values: { heart_rate: 88, spo2: null, context: "routine" } },
    ]);
    expect(errors).toEqual([]);
  });

  it("rejects negative offsets", () => {
    const errors = validateRecords(doc, vitals, [
      { offset_minutes: -1, values: { heart_rate: 88, spo2: 97, context: "routine" } },
    ]);
    expect(errors[0].field).toBe("vitals[0].offset_minutes");
  });
});
