import init, { draftTree, chainProfile, acceptance } from "./pkg/treespec_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const fmt = (x) => (x === null || x === undefined ? "-" : Number(x).toFixed(4));

function cell(tag, text, cls) {
  const el = document.createElement(tag);
  el.textContent = text;
  if (cls) el.className = cls;
  return el;
}

function table(headers, rows) {
  const t = document.createElement("table");
  const head = t.insertRow();
  headers.forEach((h) => head.appendChild(cell("th", h)));
  rows.forEach((r) => {
    const tr = t.insertRow();
    r.forEach((v) => tr.appendChild(v instanceof Node ? wrap(v) : cell("td", v)));
  });
  return t;
}

function wrap(node) {
  const td = document.createElement("td");
  td.appendChild(node);
  return td;
}

function show(target, build) {
  const out = $(target);
  out.replaceChildren();
  try {
    build(out);
  } catch (e) {
    out.appendChild(cell("p", String(e.message ?? e), "error"));
  }
}

function renderTree(out) {
  const res = JSON.parse(draftTree(
    $("corpus").value, $("context").value,
    num("max_depth"), num("max_branch"), num("root_top_k"), num("max_nodes"),
    num("draft_order"), num("target_order"), num("smoothing"),
  ));
  out.appendChild(cell("p", `|V| = ${res.vocab_size}, context [${res.context.join(" ")}], bonus token "${res.bonus}"`));
  out.appendChild(table(
    ["id", "parent", "token", "depth", "p_draft", "p_target", "alpha", "entropy"],
    res.nodes.map((n) => [n.id, n.parent ?? "-", n.token, n.depth, fmt(n.p_draft), fmt(n.p_target), fmt(n.alpha), fmt(n.target_entropy)]),
  ));
  const mask = document.createElement("table");
  mask.className = "mask";
  const head = mask.insertRow();
  head.appendChild(cell("th", ""));
  res.nodes.forEach((n) => head.appendChild(cell("th", n.id)));
  res.mask.forEach((row, i) => {
    const tr = mask.insertRow();
    tr.appendChild(cell("th", i));
    [...row].forEach((b) => tr.appendChild(cell("td", b === "1" ? "1" : "", b === "1" ? "on" : "")));
  });
  out.appendChild(cell("p", "Attention mask over tree nodes (every node also sees the whole context):"));
  out.appendChild(mask);
}

function renderChain(out) {
  const res = JSON.parse(chainProfile($("alphas").value));
  out.appendChild(table(
    ["depth", "P(chain accepted)"],
    res.chain.map((p, i) => [i + 1, fmt(p)]),
  ));
  out.appendChild(cell("p", `E[L] = ${res.expected_len.toFixed(3)} tokens per target call (${res.regime})`));
}

function renderAcceptance(out) {
  const res = JSON.parse(acceptance($("target").value, $("draft").value));
  const bar = (p) => {
    const b = document.createElement("span");
    b.className = "bar";
    b.style.width = `${Math.round(p * 120)}px`;
    return b;
  };
  out.appendChild(table(
    ["token", "target", "draft", "alpha", "residual", ""],
    res.target.map((t, i) => [i, fmt(t), fmt(res.draft[i]), fmt(res.alpha[i]), fmt(res.residual ? res.residual[i] : null), bar(t)]),
  ));
  out.appendChild(cell("p", `acceptance probability ${fmt(res.accept_prob)}, target entropy ${fmt(res.target_entropy)} nats`));
}

await init();
$("build").addEventListener("click", () => show("tree-out", renderTree));
$("chain").addEventListener("click", () => show("chain-out", renderChain));
$("accept").addEventListener("click", () => show("accept-out", renderAcceptance));
show("tree-out", renderTree);
show("chain-out", renderChain);
show("accept-out", renderAcceptance);
