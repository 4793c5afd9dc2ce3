// Line-level diff for prompt version history, LCS-based.

export type DiffOp = { kind: "same" | "add" | "del"; text: string };

export function lineDiff(before: string, after: string): DiffOp[] {
  const a = before.split(/\s+/);
  const b = after.split(/\s+/);
  return tokenDiff(a, b);
}

function tokenDiff(a: string[], b: string[]): DiffOp[] {
  const n = a.length;
  const m = b.length;
  // LCS table
  const lcs: number[][] = Array.from({ length: n + 1 }, () =>
    new Array(m + 1).fill(0),
  );
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      lcs[i][j] =
        a[i] === b[j]
          ? lcs[i + 1][j + 1] + 1
          : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const ops: DiffOp[] = [];
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (a[i] === b[j]) {
      ops.push({ kind: "same", text: a[i] });
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      ops.push({ kind: "del", text: a[i] });
      i++;
    } else {
      ops.push({ kind: "add", text: b[j] });
      j++;
    }
  }
  while (i < n) ops.push({ kind: "del", text: a[i++] });
  while (j < m) ops.push({ kind: "add", text: b[j++] });
  return ops;
}

export interface SideBySideRow {
  field: string;
  changed: boolean;
  ops: DiffOp[];
}

const PROMPT_FIELDS = [
  "segmentation_prompt",
  "open_prompt",
  "axial_prompt",
  "selective_prompt",
  "integration_prompt",
] as const;

export function promptSetDiff(
  parent: Record<string, unknown>,
  child: Record<string, unknown>,
): SideBySideRow[] {
  return PROMPT_FIELDS.map((field) => {
    const before = String(parent[field] ?? "");
    const after = String(child[field] ?? "");
    return {
      field,
      changed: before !== after,
      ops: before === after ? [{ kind: "same", text: before }] : lineDiff(before, after),
    };
  });
}

export function addedText(ops: DiffOp[]): string {
  return ops.filter((o) => o.kind === "add").map((o) => o.text).join(" ");
}
