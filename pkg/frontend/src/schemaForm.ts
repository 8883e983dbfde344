import type { ParamSpec, ProcessorManifest } from "./types";

// Widget kinds the DOM layer knows how to render. Every manifest param
// type maps to exactly one kind; unknown types fall back to text.
export type FieldKind = "number" | "text" | "toggle" | "select";

export interface FormField {
  name: string;
  label: string;
  kind: FieldKind;
  required: boolean;
  /** Current value as the string that will be posted in the pipeline config. */
  value: string;
  /** Step hint for numeric inputs: "1" for integers, "any" for reals. */
  step: string | null;
  /** Fixed choices for select fields, in manifest order. */
  variants: string[];
}

export interface FormModel {
  processor: string;
  fields: FormField[];
}

function kindFor(spec: ParamSpec): FieldKind {
  switch (spec.type) {
    case "int":
    case "real":
      return "number";
    case "bool":
      return "toggle";
    case "enum":
      return "select";
    default:
      return "text";
  }
}

function initialValue(spec: ParamSpec, preset?: Record<string, string>): string {
  const fromPreset = preset?.[spec.name];
  if (fromPreset !== undefined) return fromPreset;
  if (spec.default !== null) return spec.default;
  if (spec.type === "bool") return "false";
  return "";
}

/**
 * Build the editable form model for one processor. Pure: the result is a
 * function of the manifest and the preset values only, and the field list
 * matches the declared params one to one, in declaration order.
 */
export function formFromManifest(
  manifest: ProcessorManifest,
  preset?: Record<string, string>,
): FormModel {
  const fields = manifest.params.map((spec): FormField => {
    const kind = kindFor(spec);
    return {
      name: spec.name,
      label: spec.label === "" ? spec.name : spec.label,
      kind,
      required: spec.required,
      value: initialValue(spec, preset),
      step: kind === "number" ? (spec.type === "int" ? "1" : "any") : null,
      variants: kind === "select" ? [...spec.variants] : [],
    };
  });
  return { processor: manifest.id, fields };
}

/** Replace one field's value, returning a new model. Unknown names are ignored. */
export function withFieldValue(model: FormModel, name: string, value: string): FormModel {
  return {
    processor: model.processor,
    fields: model.fields.map((f) => (f.name === name ? { ...f, value } : f)),
  };
}

/**
 * Collect the params to post. Empty optional fields are omitted so the
 * service applies its own defaults; empty required fields are kept empty
 * and left for server-side validation to reject.
 */
export function formValues(model: FormModel): Record<string, string> {
  const values: Record<string, string> = {};
  for (const field of model.fields) {
    if (field.value === "" && !field.required) continue;
    values[field.name] = field.value;
  }
  return values;
}

/** Names of required fields still blank, for inline validation hints. */
export function missingRequired(model: FormModel): string[] {
  return model.fields.filter((f) => f.required && f.value === "").map((f) => f.name);
}
