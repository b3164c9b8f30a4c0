// The five judgment classes, in the service's fixed order.  This module
// is the only place labels are defined: there is no free-text path to a
// submission anywhere in the client.

export const LABELS = [
    "crying",
    "laughing",
    "canonical",
    "non_canonical",
    "junk",
] as const;

export type LabelName = (typeof LABELS)[number];

export const LABEL_TITLES: Record<LabelName, string> = {
    crying: "Crying",
    laughing: "Laughing",
    canonical: "Canonical",
    non_canonical: "Non-canonical",
    junk: "Junk / other",
};

// Keyboard shortcuts 1..5 follow the fixed label order, so "3" is
// always "canonical".
export function labelForKey(key: string): LabelName | null {
    const index = Number.parseInt(key, 10) - 1;
    if (Number.isInteger(index) && index >= 0 && index < LABELS.length) {
        return LABELS[index] ?? null;
    }
    return null;
}

export function isLabel(value: string): value is LabelName {
    return (LABELS as readonly string[]).includes(value);
}
