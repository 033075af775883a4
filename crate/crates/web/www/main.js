// Expects the wasm-bindgen output in ./pkg (see the README).
import init, { forms, validate_poem, serialize_poem, topk_distribution } from "./pkg/guti_web.js";

const $ = (id) => document.getElementById(id);

function show(text, ok) {
  $("verdict").textContent = ok === undefined ? "" : ok ? "well-formed" : "ill-formed";
  $("verdict").className = ok ? "ok" : "bad";
  $("out").textContent = text;
}

function describe(report) {
  return report.results
    .map((r) => {
      const at = (r.positions || [])
        .map((p) => (p.column === undefined ? `line ${p.line + 1}` : `line ${p.line + 1} col ${p.column + 1}`))
        .join(", ");
      return `${r.outcome.padEnd(7)} ${r.severity.padEnd(8)} ${r.rule}${at ? " @ " + at : ""}: ${r.message}`;
    })
    .join("\n");
}

function guarded(fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      show(String(e));
    }
  };
}

await init();

for (const f of JSON.parse(forms())) {
  const opt = document.createElement("option");
  opt.value = f.id;
  opt.textContent = f.aliases.length ? `${f.id} (${f.aliases.join(", ")})` : f.id;
  $("form").append(opt);
}
$("form").value = "五绝";

$("check").onclick = guarded(() => {
  const report = JSON.parse(validate_poem($("form").value, $("theme").value, $("body").value, $("acrostic").checked));
  show(describe(report), report.well_formed);
});

$("serialize").onclick = guarded(() => {
  const s = JSON.parse(serialize_poem($("form").value, $("theme").value, $("body").value));
  show(`${s.text}\n\nacrostic variant (theme ${s.acrostic_theme}):\n${s.acrostic_text}`);
});

$("topk").onclick = () => {
  try {
    const rows = JSON.parse(topk_distribution($("logits").value, Number($("k").value), Number($("temp").value)));
    $("dist").innerHTML =
      "<table>" +
      rows
        .map((r) => `<tr><td>id ${r.id}</td><td>${r.p.toFixed(4)}</td><td><span class="bar" style="width:${r.p * 20}rem"></span></td></tr>`)
        .join("") +
      "</table>";
  } catch (e) {
    $("dist").textContent = String(e);
  }
};
