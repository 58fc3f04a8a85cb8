/**
 * Static name analysis of a cell: which top-level identifiers the code
 * loads, which it assigns, and which it deletes.
 *
 * The caller intersects loads with the names that existed before the cell
 * ran, so over-approximation here (e.g. a shadowed local counted as a
 * load) stays harmless. Property names, object-literal keys, and
 * declaration names are never loads.
 */

import * as ts from "typescript";

export interface NameSets {
  loads: Set<string>;
  stores: Set<string>;
  deletes: Set<string>;
}

const ASSIGNMENT_OPS = new Set<ts.SyntaxKind>([
  ts.SyntaxKind.EqualsToken,
  ts.SyntaxKind.PlusEqualsToken,
  ts.SyntaxKind.MinusEqualsToken,
  ts.SyntaxKind.AsteriskEqualsToken,
  ts.SyntaxKind.SlashEqualsToken,
  ts.SyntaxKind.PercentEqualsToken,
  ts.SyntaxKind.AsteriskAsteriskEqualsToken,
  ts.SyntaxKind.AmpersandEqualsToken,
  ts.SyntaxKind.BarEqualsToken,
  ts.SyntaxKind.CaretEqualsToken,
  ts.SyntaxKind.LessThanLessThanEqualsToken,
  ts.SyntaxKind.GreaterThanGreaterThanEqualsToken,
  ts.SyntaxKind.GreaterThanGreaterThanGreaterThanEqualsToken,
  ts.SyntaxKind.QuestionQuestionEqualsToken,
  ts.SyntaxKind.AmpersandAmpersandEqualsToken,
  ts.SyntaxKind.BarBarEqualsToken,
]);

export function analyzeCell(source: string): NameSets {
  const file = ts.createSourceFile("cell.js", source, ts.ScriptTarget.Latest, true, ts.ScriptKind.JS);
  const loads = new Set<string>();
  const stores = new Set<string>();
  const deletes = new Set<string>();

  function isDeclarationName(node: ts.Identifier): boolean {
    const parent = node.parent;
    return (
      (ts.isVariableDeclaration(parent) && parent.name === node) ||
      (ts.isFunctionDeclaration(parent) && parent.name === node) ||
      (ts.isClassDeclaration(parent) && parent.name === node) ||
      (ts.isParameter(parent) && parent.name === node) ||
      (ts.isBindingElement(parent) && parent.name === node)
    );
  }

  function visit(node: ts.Node): void {
    if (ts.isBinaryExpression(node) && ASSIGNMENT_OPS.has(node.operatorToken.kind)) {
      if (ts.isIdentifier(node.left)) {
        stores.add(node.left.text);
        if (node.operatorToken.kind !== ts.SyntaxKind.EqualsToken) {
          loads.add(node.left.text); // compound assignment reads first
        }
        visit(node.right);
        return;
      }
    }
    if (
      (ts.isPrefixUnaryExpression(node) || ts.isPostfixUnaryExpression(node)) &&
      (node.operator === ts.SyntaxKind.PlusPlusToken ||
        node.operator === ts.SyntaxKind.MinusMinusToken) &&
      ts.isIdentifier(node.operand)
    ) {
      loads.add(node.operand.text);
      stores.add(node.operand.text);
      return;
    }
    if (ts.isDeleteExpression(node) && ts.isIdentifier(node.expression)) {
      deletes.add(node.expression.text);
      return;
    }
    if (ts.isVariableDeclaration(node) && ts.isIdentifier(node.name)) {
      stores.add(node.name.text);
      if (node.initializer) visit(node.initializer);
      return;
    }
    if (ts.isIdentifier(node)) {
      const parent = node.parent;
      const isPropertyName =
        (ts.isPropertyAccessExpression(parent) && parent.name === node) ||
        (ts.isPropertyAssignment(parent) && parent.name === node) ||
        (ts.isMethodDeclaration(parent) && parent.name === node) ||
        (ts.isPropertyDeclaration(parent) && parent.name === node);
      if (!isPropertyName && !isDeclarationName(node)) {
        loads.add(node.text);
      }
      return;
    }
    ts.forEachChild(node, visit);
  }

  visit(file);
  return { loads, stores, deletes };
}
