// Chat client for the facetalk session API. All dialog semantics live on
// the server; this file only renders what GET /state returns.

const $ = (id) => document.getElementById(id);
let sessionId = sessionStorage.getItem("facetalk-session");
let labels = { facets: {}, tags: {} };
let busy = false;

async function api(method, path, body) {
  const res = await fetch(path, {
    method,
    headers: body ? { "content-type": "application/json" } : {},
    body: body ? JSON.stringify(body) : undefined,
  });
  if (res.status === 204) return null;
  const data = await res.json();
  if (!res.ok) throw Object.assign(new Error(data.message), { code: data.code });
  return data;
}

async function loadLabels() {
  const schema = await api("GET", "/v1/schema");
  for (const cat of schema.categories) {
    for (const f of cat.facets) {
      labels.facets[f.id] = f.display_name || f.id;
      for (const t of f.tags || []) labels.tags[`${f.id}/${t.id}`] = t.text;
    }
  }
}

function say(speaker, text) {
  const li = document.createElement("li");
  li.className = speaker;
  const span = document.createElement("span");
  span.textContent = text;
  li.append(span);
  $("transcript").append(li);
  li.scrollIntoView();
}

function valueLabel(value) {
  if (value.tag) return labels.tags[`${value.tag.facet}/${value.tag.tag}`] || value.tag.tag;
  if (value.span !== undefined) return value.span;
  return String(value.number);
}

function rangeText(range) {
  const part = (b, below) => {
    if (!b) return null;
    const op = below ? (b.inclusive ? "≤" : "<") : b.inclusive ? "≥" : ">";
    return `${op} ${b.value}`;
  };
  return [part(range.lower, false), part(range.upper, true)].filter(Boolean).join(", ");
}

// One chip per serialized predicate; removal goes through the parser.
export function chipsOf(state) {
  const chips = [];
  for (const [facet, fs] of Object.entries(state.facets || {})) {
    const name = labels.facets[facet] || facet;
    for (const [polarity, preds] of [["positive", fs.positive || []], ["negative", fs.negative || []]]) {
      for (const p of preds) {
        const v = valueLabel(p.value);
        chips.push({ facet: name, value: v, polarity, remove: `i don't care if it's ${v} or not` });
      }
    }
    if (fs.range) {
      chips.push({ facet: name, value: rangeText(fs.range), polarity: "positive", remove: `any ${name.toLowerCase()}` });
    }
  }
  for (const p of state.ungrounded || []) {
    const polarity = p.predicate_type === "NOT_EQUALS" ? "negative" : "positive";
    chips.push({ facet: null, value: p.value.span, polarity, remove: `i don't care if it's ${p.value.span} or not` });
  }
  return chips;
}

function renderState(view) {
  $("summary").textContent = view.summary;
  $("prompt").textContent = view.prompt || "";
  const ul = $("chips");
  ul.replaceChildren();
  for (const chip of chipsOf(view.state)) {
    const li = document.createElement("li");
    li.className = chip.polarity;
    const text = chip.polarity === "negative" ? `not ${chip.value}` : chip.value;
    li.textContent = chip.facet ? `${chip.facet}: ${text}` : `'${text}'`;
    const x = document.createElement("button");
    x.textContent = "×";
    x.title = "remove";
    x.onclick = () => send(chip.remove);
    li.append(x);
    ul.append(li);
  }
}

function renderProducts(turn) {
  const ul = $("products");
  ul.replaceChildren();
  for (const p of turn.products) {
    const li = document.createElement("li");
    li.innerHTML = "<strong></strong><br><small></small>";
    li.querySelector("strong").textContent = p.title || p.id;
    li.querySelector("small").textContent = p.id;
    ul.append(li);
  }
  $("banner").hidden = !turn.events.some((e) => e.kind === "ZERO_RESULTS");
}

async function ensureSession() {
  if (sessionId) {
    try {
      renderState(await api("GET", `/v1/sessions/${sessionId}/state`));
      return;
    } catch (e) {
      if (e.code !== "NOT_FOUND") throw e;
    }
  }
  sessionId = (await api("POST", "/v1/sessions")).session_id;
  sessionStorage.setItem("facetalk-session", sessionId);
}

async function send(text) {
  text = text.trim();
  if (!text || busy) return;
  busy = true;
  $("utterance").disabled = true;
  say("user", text);
  try {
    const turn = await api("POST", `/v1/sessions/${sessionId}/utterances`, { text });
    if (turn.prompt) say("system", turn.prompt);
    renderProducts(turn);
    renderState(await api("GET", `/v1/sessions/${sessionId}/state`));
  } catch (e) {
    say("system", `error: ${e.message}`);
  } finally {
    busy = false;
    $("utterance").disabled = false;
    $("utterance").focus();
  }
}

$("composer").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const text = $("utterance").value;
  $("utterance").value = "";
  send(text);
});

await loadLabels();
await ensureSession();
