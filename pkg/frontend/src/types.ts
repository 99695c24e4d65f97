// Wire types of the inference service. The panel never computes predictions
// itself; every displayed number comes from one of these response fields.

export interface RecordValues {
  [feature: string]: number | string | null;
}

export interface RequestRecord {
  offset_minutes: number;
  values: RecordValues;
  stop_offset_minutes?: number | null;
}

export interface PredictRequest {
  sources: { [sourceName: string]: RequestRecord[] };
}

export interface PredictResponse {
  probabilities: number[];
  predicted_class: string;
  class_names: string[];
  fusion_weights: { [sourceName: string]: number };
  model_hash: string;
}

export interface CategoricalFeature {
  name: string;
  categories: string[];
}

export interface SourceSchema {
  source_id: number;
  source_name: string;
  numeric_features: string[];
  categorical_features: CategoricalFeature[];
  dimension_feature: string | null;
  frequency_feature: string | null;
}

export interface FeatureBounds {
  [dimensionValue: string]: { low: number; high: number };
}

export interface SchemaDoc {
  class_names: string[];
  sources: SourceSchema[];
  bounds: { [source: string]: { [feature: string]: FeatureBounds } };
  model_hash: string;
}

export interface Template {
  name: string;
  target_class?: string;
  cell?: string;
  truth_class?: string;
  request: PredictRequest;
  stored_prediction: PredictResponse;
}

export interface FieldError {
  field: string;
  message: string;
}
