import init, { matchRequest, scanUrl, textSimilarity, wordTokens } from "./pkg/trackdiff_web.js";

const $ = (id) => document.getElementById(id);

function cell(row, text, cls) {
  const td = row.insertCell();
  td.textContent = text;
  if (cls) td.className = cls;
  return td;
}

function runMatch() {
  const r = JSON.parse(matchRequest($("list").value, $("req-url").value, $("page-url").value, $("req-cookie").value));
  const out = $("match-out");
  out.className = r.decision;
  const lines = [`decision: ${r.decision}`];
  if (r.rule) lines.push(`rule:     ${r.rule}`);
  for (const f of r.stripped) lines.push(`strip ${f.kind} ${f.name}  (${f.rule})`);
  lines.push(`${r.rules} rules parsed, ${r.skipped.length} lines skipped`);
  for (const s of r.skipped) lines.push(`  line ${s.line}: ${s.error}`);
  out.textContent = lines.join("\n");
}

function runScan() {
  const r = JSON.parse(scanUrl($("scan-url").value, $("scan-cookie").value, $("per-field").value, $("per-server").value));
  const out = $("scan-out");
  out.replaceChildren();
  if (r.error) {
    out.textContent = r.error;
    return;
  }
  if (r.fields.length === 0) {
    out.textContent = "no query parameters or cookies";
    return;
  }
  const table = document.createElement("table");
  const head = table.createTHead().insertRow();
  for (const h of ["kind", "name", "value", "charset", "combinations", "bits", "selected by"]) {
    const th = document.createElement("th");
    th.textContent = h;
    head.appendChild(th);
  }
  const body = table.createTBody();
  for (const f of r.fields) {
    const row = body.insertRow();
    if (f.selected_by !== "-") row.className = "sel";
    cell(row, f.kind);
    cell(row, f.name);
    cell(row, f.value);
    cell(row, f.charset);
    cell(row, f.combinations, "num");
    cell(row, String(f.bits), "num");
    cell(row, f.selected_by);
  }
  out.appendChild(table);
}

function runSimilarity() {
  const a = $("text-a").value;
  const b = $("text-b").value;
  const s = textSimilarity(a, b);
  $("sim-out").textContent = [
    `cosine: ${s.toFixed(6)}${s > 0.95 ? "  (above 0.95)" : ""}`,
    `A: ${wordTokens(a)}`,
    `B: ${wordTokens(b)}`,
  ].join("\n");
}

await init();
$("status").textContent = "ready";
$("match-btn").addEventListener("click", runMatch);
$("scan-btn").addEventListener("click", runScan);
$("sim-btn").addEventListener("click", runSimilarity);
runMatch();
runScan();
runSimilarity();
