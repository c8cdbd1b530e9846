import { describe, expect, it } from "vitest";

import { TreeNode } from "../src/api.js";
import { DendrogramView, leafIds, pathKey } from "../src/dendrogram.js";

const tree: TreeNode = {
  height: 10,
  children: [
    {
      height: 1,
      children: [
        { id: "a", height: 0 },
        { id: "b", height: 0 },
      ],
    },
    { id: "c", height: 0 },
  ],
};

describe("leafIds", () => {
  it("collects leaves left to right", () => {
    expect(leafIds(tree)).toEqual(["a", "b", "c"]);
  });

  it("handles a single leaf", () => {
    expect(leafIds({ id: "solo", height: 0 })).toEqual(["solo"]);
  });
});

describe("DendrogramView", () => {
  it("starts with the root expanded only", () => {
    const view = new DendrogramView(tree);
    expect(view.isExpanded([])).toBe(true);
    expect(view.isExpanded([0])).toBe(false);
  });

  it("toggle flips expansion state", () => {
    const view = new DendrogramView(tree);
    expect(view.toggle([0])).toBe(true);
    expect(view.isExpanded([0])).toBe(true);
    expect(view.toggle([0])).toBe(false);
    expect(view.isExpanded([0])).toBe(false);
  });

  it("setRoot resets expansion", () => {
    const view = new DendrogramView(tree);
    view.toggle([0]);
    view.setRoot(tree);
    expect(view.isExpanded([0])).toBe(false);
    expect(view.isExpanded([])).toBe(true);
  });

  it("path keys distinguish sibling paths", () => {
    expect(pathKey([0, 1])).not.toBe(pathKey([1, 0]));
  });
});
