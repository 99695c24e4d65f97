// Client-side input validation. Numeric ranges come from the served bounds
// document (mean +/- 4 sigma of the training data), never from local rules.

import type { FeatureBounds, RequestRecord, SchemaDoc, SourceSchema, FieldError } from "./types.js";

export function parseCommaSeparated(text: string): number[] {
  const trimmed = text.trim();
  if (trimmed === "") return [];
  return trimmed.split(",").map((part) => Number(part.trim()));
}

/** Quick series entry: one offsets line plus one line per numeric feature.
 * Every line must carry the same count of finite numbers. */
export function validateSeriesEntry(
  schema: SourceSchema,
  offsetsText: string,
  valueTexts: { [feature: string]: string },
): { records: RequestRecord[]; errors: FieldError[] } {
  const errors: FieldError[] = [];
  const offsets = parseCommaSeparated(offsetsText);
  if (offsets.some((v) => !Number.isFinite(v))) {
    errors.push({ field: `${schema.source_name}.offsets`, message: "offsets must be numbers" });
  }
  if (offsets.some((v) => v < 0)) {
    errors.push({ field: `${schema.source_name}.offsets`, message: "offsets must be >= 0" });
  }
  const parsed: { [feature: string]: number[] } = {};
  for (const feature of schema.numeric_features) {
    const values = parseCommaSeparated(valueTexts[feature] ?? "");
    if (values.some((v) => !Number.isFinite(v))) {
      errors.push({
        field: `${schema.source_name}.${feature}`,
        message: `${feature} values must be numbers`,
      });
    }
    if (values.length !== offsets.length) {
      errors.push({
        field: `${schema.source_name}.${feature}`,
        message: `${feature}: ${values.length} values for ${offsets.length} offsets`,
      });
    }
    parsed[feature] = values;
  }
  if (errors.length > 0) return { records: [], errors };
  const records = offsets.map((offset, i) => {
    const values: { [k: string]: number | string | null } = {};
    for (const feature of schema.numeric_features) values[feature] = parsed[feature][i];
    for (const cat of schema.categorical_features) values[cat.name] = null;
    return { offset_minutes: offset, values };
  });
  return { records, errors };
}

export function boundsFor(
  doc: SchemaDoc,
  source: string,
  feature: string,
  dimensionValue: string,
): { low: number; high: number } | null {
  const featureBounds: FeatureBounds | undefined = doc.bounds[source]?.[feature];
  if (!featureBounds) return null;
  return featureBounds[dimensionValue] ?? featureBounds[""] ?? null;
}

/** Full-record validation against the schema and the served bounds. */
export function validateRecords(
  doc: SchemaDoc,
  schema: SourceSchema,
  records: RequestRecord[],
): FieldError[] {
  const errors: FieldError[] = [];
  records.forEach((record, i) => {
    const path = `${schema.source_name}[${i}]`;
    if (!Number.isFinite(record.offset_minutes) || record.offset_minutes < 0) {
      errors.push({ field: `${path}.offset_minutes`, message: "offset must be a number >= 0" });
    }
    for (const feature of schema.numeric_features) {
      const value = record.values[feature];
      if (value === null || value === undefined) continue;
      if (typeof value !== "number" || !Number.isFinite(value)) {
        errors.push({ field: `${path}.${feature}`, message: `${feature} must be a number` });
        continue;
      }
      const dimension =
        schema.dimension_feature != null
          ? String(record.values[schema.dimension_feature] ?? "")
          : "";
      const bounds = boundsFor(doc, schema.source_name, feature, dimension);
      if (bounds && (value < bounds.low || value > bounds.high)) {
        errors.push({
          field: `${path}.${feature}`,
          message: `${feature} outside [${bounds.low.toFixed(2)}, ${bounds.high.toFixed(2)}]`,
        });
      }
    }
  });
  return errors;
}
