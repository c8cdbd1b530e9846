/** Collapsible dendrogram model over the service's recursive JSON export. */

import { TreeNode } from "./api.js";

export function isLeaf(node: TreeNode): boolean {
  return node.id !== undefined;
}

/** Leaf image ids under a node, left to right. */
export function leafIds(node: TreeNode): string[] {
  if (node.id !== undefined) return [node.id];
  return (node.children ?? []).flatMap(leafIds);
}

/** Stable path key for expansion state: child indices from the root. */
export function pathKey(path: number[]): string {
  return path.join(".");
}

export class DendrogramView {
  private expanded = new Set<string>();

  constructor(public root: TreeNode | null = null) {
    this.expanded.add(pathKey([])); // root starts open
  }

  setRoot(root: TreeNode | null): void {
    this.root = root;
    this.expanded = new Set([pathKey([])]);
  }

  isExpanded(path: number[]): boolean {
    return this.expanded.has(pathKey(path));
  }

  toggle(path: number[]): boolean {
    const key = pathKey(path);
    if (this.expanded.has(key)) {
      this.expanded.delete(key);
      return false;
    }
    this.expanded.add(key);
    return true;
  }
}
