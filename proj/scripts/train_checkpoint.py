#!/usr/bin/env python3
"""Builds the committed pretrained-checkpoint assets under assets/pretrained/.

Pipeline:
  1. generate a synthetic fact corpus (facts.jsonl)
  2. train a byte-level BPE (vocab.json + merges.txt) on that corpus
     (pretokenizer ported 1:1 from src/tokenizer.cpp)
  3. run the ragprobe CLI `augment` to materialize token-level manifests
  4. train a small GPT-2-style decoder on:
       - vanilla prompts -> answer           (parametric recall)
       - contexts stating the answer -> copy (counterfactual answers force
         reading the context; corrupted-subject variants force copying even
         when the question subject is garbage)
       - attribute-free contexts -> recall
  5. export weights in the tensor-container format + config.json
  6. cross-check the exported container with a numpy forward pass

Usage: python3 scripts/train_checkpoint.py [--cli build/tools/ragprobe]
"""

import argparse
import json
import math
import os
import random
import struct
import subprocess
import sys
import tempfile
from collections import Counter

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ASSETS = os.path.join(ROOT, "assets", "pretrained")

SEED = 20240601

# --- fact corpus -------------------------------------------------------------

SYLLABLES = ["bre", "vel", "tar", "quor", "mos", "plim", "zor", "gil", "fen",
             "dra", "col", "ban", "ser", "tul", "wex", "nor", "har", "lim"]
SUFFIXES = ["ia", "or", "eth", "and", "holm", "wick", "mere", "stead", "rath",
            "lyn", "dale", "fort"]
SECOND_WORDS = ["Province", "Valley", "Union", "District", "Republic", "Isles"]

RELATIONS = [
    "The capital city of {s} is",
    "The official language of {s} is",
    "The local currency of {s} is",
    "The highest peak of {s} is",
]


def make_name(rng, used):
    while True:
        name = (rng.choice(SYLLABLES) + rng.choice(SYLLABLES) + rng.choice(SUFFIXES)).capitalize()
        if name not in used:
            used.add(name)
            return name


def generate_facts(n_facts, rng):
    used = set()
    facts = []
    for i in range(n_facts):
        subject = make_name(rng, used)
        if rng.random() < 0.4:
            subject = subject + " " + rng.choice(SECOND_WORDS)
        answer = make_name(rng, used)
        prompt = RELATIONS[i % len(RELATIONS)].format(s=subject)
        facts.append({"prompt": prompt, "subject": subject, "attribute": answer})
    return facts


# Keep in sync with context_filler_pool() / relation_filler_pool() in
# src/corpus.cpp; only used to give the BPE trainer coverage of filler words.
FILLER_POOL = [
    "the report covers several routine matters in order",
    "a short note follows the earlier section of the file",
    "general remarks appear before the main entry below",
    "the summary lists common items without further detail",
    "some records were copied from an older ledger page",
    "an index of minor updates sits near the margin",
    "the archive keeps assorted papers from past reviews",
    "later pages mention ordinary corrections and edits",
    "a plain heading marks the start of this section",
    "various small entries continue across the page",
    "the clerk added routine stamps beside each item",
    "standard filing rules apply to the documents here",
]
RELATION_FILLERS = [
    "is recorded in the files alongside",
    "is linked in this register to",
    "appears in the notes together with",
    "is listed in the catalog under",
]

# --- byte-level BPE (pretokenizer ported from src/tokenizer.cpp) -------------

SPACE_BYTES = set(b" \t\n\r\x0c\x0b")


def is_space(c):
    return c in SPACE_BYTES


def is_letter(c):
    return (65 <= c <= 90) or (97 <= c <= 122) or c >= 0x80


def is_digit(c):
    return 48 <= c <= 57


def pretokenize(data: bytes):
    chunks = []
    i, n = 0, len(data)
    while i < n:
        c = data[i]
        if is_space(c):
            j = i
            while j < n and is_space(data[j]):
                j += 1
            followed = j < n
            single_space_prefix = followed and data[j - 1] == 0x20
            run_end = j - 1 if (followed and single_space_prefix) else j
            if run_end > i:
                chunks.append((i, run_end))
            i = run_end
            if i == j:
                continue
            k = j
            d = data[k]
            if is_letter(d):
                while k < n and is_letter(data[k]):
                    k += 1
            elif is_digit(d):
                while k < n and is_digit(data[k]):
                    k += 1
            else:
                while k < n and not (is_space(data[k]) or is_letter(data[k]) or is_digit(data[k])):
                    k += 1
            chunks.append((i, k))
            i = k
            continue
        if c == 0x27 and i + 1 < n:  # apostrophe contractions
            c1 = data[i + 1:i + 2]
            if c1 in (b"s", b"t", b"m", b"d"):
                chunks.append((i, i + 2))
                i += 2
                continue
            if i + 2 < n and data[i + 1:i + 3] in (b"re", b"ve", b"ll"):
                chunks.append((i, i + 3))
                i += 3
                continue
        k = i
        if is_letter(c):
            while k < n and is_letter(data[k]):
                k += 1
        elif is_digit(c):
            while k < n and is_digit(data[k]):
                k += 1
        else:
            while k < n and not (is_space(data[k]) or is_letter(data[k]) or is_digit(data[k])):
                k += 1
        chunks.append((i, k))
        i = k
    return chunks


def bytes_to_unicode():
    direct = list(range(ord("!"), ord("~") + 1)) + list(range(0xA1, 0xAC + 1)) + \
        list(range(0xAE, 0xFF + 1))
    table = {}
    n = 0
    for b in range(256):
        if b in direct:
            table[b] = chr(b)
        else:
            table[b] = chr(256 + n)
            n += 1
    return table


def train_bpe(texts, max_merges=1200):
    b2u = bytes_to_unicode()
    word_freq = Counter()
    for text in texts:
        data = text.encode("utf-8")
        for a, b in pretokenize(data):
            word = tuple(b2u[x] for x in data[a:b])
            word_freq[word] += 1

    merges = []
    for _ in range(max_merges):
        pair_counts = Counter()
        for word, f in word_freq.items():
            for pair in zip(word, word[1:]):
                pair_counts[pair] += f
        if not pair_counts:
            break
        best, count = max(pair_counts.items(), key=lambda kv: (kv[1], kv[0]))
        if count < 2:
            break
        merges.append(best)
        merged_symbol = best[0] + best[1]
        new_freq = Counter()
        for word, f in word_freq.items():
            out = []
            i = 0
            while i < len(word):
                if i + 1 < len(word) and (word[i], word[i + 1]) == best:
                    out.append(merged_symbol)
                    i += 2
                else:
                    out.append(word[i])
                    i += 1
            new_freq[tuple(out)] += f
        word_freq = new_freq

    vocab = {b2u[b]: b for b in range(256)}
    next_id = 256
    for a, b in merges:
        tok = a + b
        if tok not in vocab:
            vocab[tok] = next_id
            next_id += 1
    return vocab, merges


# --- model -------------------------------------------------------------------

class Block(nn.Module):
    def __init__(self, d, heads, d_mlp, eps):
        super().__init__()
        self.ln1 = nn.LayerNorm(d, eps=eps)
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.ln2 = nn.LayerNorm(d, eps=eps)
        self.fc_in = nn.Linear(d, d_mlp)
        self.fc_out = nn.Linear(d_mlp, d)
        self.heads = heads
        self.d_head = d // heads

    def forward(self, h):
        B, T, D = h.shape
        x = self.ln1(h)
        q = self.q(x).view(B, T, self.heads, self.d_head).transpose(1, 2)
        k = self.k(x).view(B, T, self.heads, self.d_head).transpose(1, 2)
        v = self.v(x).view(B, T, self.heads, self.d_head).transpose(1, 2)
        a = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        a = a.transpose(1, 2).contiguous().view(B, T, D)
        h = h + self.o(a)
        h = h + self.fc_out(F.gelu(self.fc_in(self.ln2(h)), approximate="none"))
        return h


class TinyDecoder(nn.Module):
    def __init__(self, vocab, d, heads, layers, d_mlp, max_seq, eps=1e-5):
        super().__init__()
        self.wte = nn.Embedding(vocab, d)
        self.wpe = nn.Embedding(max_seq, d)
        self.blocks = nn.ModuleList([Block(d, heads, d_mlp, eps) for _ in range(layers)])
        self.ln_f = nn.LayerNorm(d, eps=eps)
        self.unembed = nn.Linear(d, vocab, bias=False)
        nn.init.normal_(self.wte.weight, std=0.04)
        nn.init.normal_(self.wpe.weight, std=0.02)

    def forward(self, idx):
        B, T = idx.shape
        pos = torch.arange(T, device=idx.device)
        h = self.wte(idx) + self.wpe(pos)[None, :, :]
        for block in self.blocks:
            h = block(h)
        return self.unembed(self.ln_f(h))


# --- training data from manifests ---------------------------------------------

def read_manifest(path):
    instances = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            j = json.loads(line)
            if "instance_id" not in j:
                continue
            instances.append(j)
    return instances


def splice_attribute(inst, donor):
    """Replace the context attribute span with the donor's attribute tokens."""
    ids = list(inst["token_ids"])
    a0, a1 = inst["attribute_token_span"]
    d0, d1 = donor["attribute_token_span"]
    donor_ids = donor["token_ids"][d0:d1 + 1]
    new_ids = ids[:a0] + donor_ids + ids[a1 + 1:]
    shift = len(donor_ids) - (a1 - a0 + 1)
    s0, s1 = inst["subject_token_span"]
    return new_ids, donor_ids[0], (s0 + shift, s1 + shift)


def corrupt_subject(ids, subj_span, donor_subject_ids):
    s0, s1 = subj_span
    return ids[:s0] + donor_subject_ids + ids[s1 + 1:]


def build_examples(vanilla_by_fact, manifests, rng):
    """Returns list of (token_ids, target_id)."""
    examples = []
    # oversampled: parametric recall has far fewer distinct sequences than the
    # copy task, but must be learned at least as well
    for _ in range(12):
        for inst in vanilla_by_fact.values():
            examples.append((list(inst["token_ids"]), inst["answer_first_token"], "vanilla"))

    # donor subject tokens come from the question part of rag instances
    def question_subject_ids(inst):
        s0, s1 = inst["subject_token_span"]
        return inst["token_ids"][s0:s1 + 1]

    for manifest in manifests:
        rag = [i for i in manifest if i["setting"] == "rag"]
        with_attr = [i for i in rag if i.get("attribute_token_span")]
        without_attr = [i for i in rag if not i.get("attribute_token_span")]
        for inst in without_attr:
            examples.append((list(inst["token_ids"]), inst["answer_first_token"], "rag_noattr"))
        for inst in with_attr:
            examples.append((list(inst["token_ids"]), inst["answer_first_token"], "rag_true"))
            donor = rng.choice(with_attr)
            if donor["fact_index"] == inst["fact_index"] and len(with_attr) > 1:
                donor = rng.choice([d for d in with_attr if d["fact_index"] != inst["fact_index"]])
            new_ids, target, subj_span = splice_attribute(inst, donor)
            examples.append((new_ids, target, "rag_counterfactual"))
            # corrupted-subject copy: the question subject is another fact's
            # subject, the answer must still be read off the context
            other = rng.choice(with_attr)
            corrupted = corrupt_subject(new_ids, subj_span, question_subject_ids(other))
            examples.append((corrupted, target, "rag_corrupt_copy"))
            corrupted_true = corrupt_subject(list(inst["token_ids"]), inst["subject_token_span"],
                                             question_subject_ids(other))
            examples.append((corrupted_true, inst["answer_first_token"], "rag_corrupt_true"))
    return examples


def batch_iter(examples, batch_size, rng, device):
    order = list(range(len(examples)))
    rng.shuffle(order)
    for at in range(0, len(order), batch_size):
        chunk = [examples[i] for i in order[at:at + batch_size]]
        max_len = max(len(e[0]) for e in chunk)
        idx = torch.zeros(len(chunk), max_len, dtype=torch.long, device=device)
        last = torch.zeros(len(chunk), dtype=torch.long, device=device)
        target = torch.zeros(len(chunk), dtype=torch.long, device=device)
        for r, (ids, tgt, _) in enumerate(chunk):
            idx[r, :len(ids)] = torch.tensor(ids, dtype=torch.long)
            last[r] = len(ids) - 1
            target[r] = tgt
        yield idx, last, target


@torch.no_grad()
def accuracy(model, examples, device, kinds=None):
    if kinds is not None:
        examples = [e for e in examples if e[2] in kinds]
    if not examples:
        return 1.0
    hit = 0
    for at in range(0, len(examples), 64):
        chunk = examples[at:at + 64]
        max_len = max(len(e[0]) for e in chunk)
        idx = torch.zeros(len(chunk), max_len, dtype=torch.long, device=device)
        for r, (ids, _, _) in enumerate(chunk):
            idx[r, :len(ids)] = torch.tensor(ids, dtype=torch.long)
        logits = model(idx)
        for r, (ids, tgt, _) in enumerate(chunk):
            hit += int(logits[r, len(ids) - 1].argmax().item() == tgt)
    return hit / len(examples)


# --- export -------------------------------------------------------------------

def export_container(model, config, path):
    tensors = {}
    tensors["embed.tok"] = model.wte.weight.detach().numpy()
    tensors["embed.pos"] = model.wpe.weight.detach().numpy()
    for i, block in enumerate(model.blocks):
        p = f"layer{i}."
        tensors[p + "ln1.scale"] = block.ln1.weight.detach().numpy()
        tensors[p + "ln1.bias"] = block.ln1.bias.detach().numpy()
        tensors[p + "attn.W_Q"] = block.q.weight.detach().numpy().T
        tensors[p + "attn.b_Q"] = block.q.bias.detach().numpy()
        tensors[p + "attn.W_K"] = block.k.weight.detach().numpy().T
        tensors[p + "attn.b_K"] = block.k.bias.detach().numpy()
        tensors[p + "attn.W_V"] = block.v.weight.detach().numpy().T
        tensors[p + "attn.b_V"] = block.v.bias.detach().numpy()
        tensors[p + "attn.W_O"] = block.o.weight.detach().numpy().T
        tensors[p + "attn.b_O"] = block.o.bias.detach().numpy()
        tensors[p + "ln2.scale"] = block.ln2.weight.detach().numpy()
        tensors[p + "ln2.bias"] = block.ln2.bias.detach().numpy()
        tensors[p + "mlp.W_in"] = block.fc_in.weight.detach().numpy().T
        tensors[p + "mlp.b_in"] = block.fc_in.bias.detach().numpy()
        tensors[p + "mlp.W_out"] = block.fc_out.weight.detach().numpy().T
        tensors[p + "mlp.b_out"] = block.fc_out.bias.detach().numpy()
    tensors["final_ln.scale"] = model.ln_f.weight.detach().numpy()
    tensors["final_ln.bias"] = model.ln_f.bias.detach().numpy()
    tensors["unembed.W"] = model.unembed.weight.detach().numpy().T

    header = {}
    offset = 0
    order = sorted(tensors)
    for name in order:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        tensors[name] = arr
        nbytes = arr.size * 4
        header[name] = {"dtype": "F32", "shape": list(arr.shape),
                        "data_offsets": [offset, offset + nbytes]}
        offset += nbytes
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in order:
            f.write(tensors[name].tobytes())
    return config


def numpy_forward(path, config, tokens):
    with open(path, "rb") as f:
        blob = f.read()
    (hlen,) = struct.unpack("<Q", blob[:8])
    header = json.loads(blob[8:8 + hlen])
    data = blob[8 + hlen:]
    t = {}
    for name, meta in header.items():
        b0, b1 = meta["data_offsets"]
        t[name] = np.frombuffer(data[b0:b1], dtype="<f4").reshape(meta["shape"]).astype(np.float64)

    def ln(x, scale, bias, eps):
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        return (x - mu) / np.sqrt(var + eps) * scale + bias

    d_head = config["d_head"]
    heads = config["n_heads"]
    h = t["embed.tok"][tokens] + t["embed.pos"][:len(tokens)]
    for i in range(config["n_layers"]):
        p = f"layer{i}."
        x = ln(h, t[p + "ln1.scale"], t[p + "ln1.bias"], config["ln_epsilon"])
        q = x @ t[p + "attn.W_Q"] + t[p + "attn.b_Q"]
        k = x @ t[p + "attn.W_K"] + t[p + "attn.b_K"]
        v = x @ t[p + "attn.W_V"] + t[p + "attn.b_V"]
        T = len(tokens)
        mixed = np.zeros_like(x)
        for head in range(heads):
            sl = slice(head * d_head, (head + 1) * d_head)
            score = q[:, sl] @ k[:, sl].T / math.sqrt(d_head)
            mask = np.triu(np.ones((T, T), dtype=bool), 1)
            score[mask] = -np.inf
            score = score - score.max(-1, keepdims=True)
            alpha = np.exp(score)
            alpha /= alpha.sum(-1, keepdims=True)
            mixed[:, sl] = alpha @ v[:, sl]
        h = h + mixed @ t[p + "attn.W_O"] + t[p + "attn.b_O"]
        x = ln(h, t[p + "ln2.scale"], t[p + "ln2.bias"], config["ln_epsilon"])
        inner = x @ t[p + "mlp.W_in"] + t[p + "mlp.b_in"]
        inner = 0.5 * inner * (1.0 + np.vectorize(math.erf)(inner / math.sqrt(2.0)))
        h = h + inner @ t[p + "mlp.W_out"] + t[p + "mlp.b_out"]
    fin = ln(h[-1], t["final_ln.scale"], t["final_ln.bias"], config["ln_epsilon"])
    return fin @ t["unembed.W"]


# --- main ---------------------------------------------------------------------

def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", default=os.path.join(ROOT, "build", "tools", "ragprobe"))
    ap.add_argument("--n-facts", type=int, default=64)
    ap.add_argument("--steps", type=int, default=900)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--d-model", type=int, default=128)
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--heads", type=int, default=4)
    args = ap.parse_args()

    rng = random.Random(SEED)
    torch.manual_seed(SEED)
    os.makedirs(ASSETS, exist_ok=True)

    facts = generate_facts(args.n_facts, rng)
    facts_path = os.path.join(ASSETS, "facts.jsonl")
    with open(facts_path, "w") as f:
        for fact in facts:
            f.write(json.dumps(fact) + "\n")
    print(f"[facts] {len(facts)} facts -> {facts_path}")

    bpe_texts = []
    for fact in facts:
        bpe_texts.append(fact["prompt"] + " " + fact["attribute"] + ".")
        bpe_texts.append(" " + fact["subject"] + " " + fact["attribute"])
    bpe_texts += FILLER_POOL * 4
    bpe_texts += [" " + s for s in FILLER_POOL]
    bpe_texts += RELATION_FILLERS * 4
    vocab, merges = train_bpe(bpe_texts, max_merges=1400)
    vocab_path = os.path.join(ASSETS, "vocab.json")
    merges_path = os.path.join(ASSETS, "merges.txt")
    with open(vocab_path, "w") as f:
        json.dump(vocab, f, sort_keys=True)
    with open(merges_path, "w") as f:
        f.write("#version: 0.2\n")
        for a, b in merges:
            f.write(f"{a} {b}\n")
    print(f"[bpe] vocab {len(vocab)} tokens, {len(merges)} merges")

    # token-level training material via the CLI augment command
    manifest_specs = []
    for i, (pos, nseg, seglen) in enumerate([("late", 2, 8), ("middle", 2, 10), ("early", 2, 8),
                                             ("late", 3, 7), ("middle", 3, 8), ("early", 2, 12),
                                             ("late", 2, 10), ("middle", 2, 7)]):
        manifest_specs.append((101 + i, pos, nseg, seglen, True))
    manifest_specs.append((201, "late", 2, 9, False))
    manifest_specs.append((202, "middle", 3, 7, False))

    workdir = tempfile.mkdtemp(prefix="ragprobe_train_")
    manifests = []
    for seed, pos, nseg, seglen, with_attr in manifest_specs:
        out = os.path.join(workdir, f"m{seed}")
        cmd = [args.cli, "augment", "--tiny-seed", "1", "--tokenizer", "bpe",
               "--vocab", vocab_path, "--merges", merges_path,
               "--corpus", facts_path, "--out", out, "--seed", str(seed),
               "--attribute-position", pos, "--n-segments", str(nseg),
               "--segment-length", str(seglen),
               "--include-attribute", "true" if with_attr else "false"]
        subprocess.run(cmd, check=True, stdout=subprocess.DEVNULL)
        manifests.append(read_manifest(os.path.join(out, "manifest.jsonl")))
    vanilla_by_fact = {i["fact_index"]: i for i in manifests[0] if i["setting"] == "vanilla"}
    print(f"[augment] {len(manifests)} manifests from {workdir}")

    examples = build_examples(vanilla_by_fact, manifests, rng)
    kinds = Counter(e[2] for e in examples)
    print(f"[data] {len(examples)} examples: {dict(kinds)}")
    max_len = max(len(e[0]) for e in examples)
    print(f"[data] longest sequence: {max_len} tokens")

    config = {
        "n_layers": args.layers,
        "n_heads": args.heads,
        "d_model": args.d_model,
        "d_head": args.d_model // args.heads,
        "d_mlp": 4 * args.d_model,
        "vocab_size": len(vocab),
        "max_seq_len": 128,
        "ln_epsilon": 1e-5,
        "tied_unembed": False,
    }
    assert max_len <= config["max_seq_len"]

    device = "cpu"
    model = TinyDecoder(len(vocab), args.d_model, args.heads, args.layers,
                        config["d_mlp"], config["max_seq_len"]).to(device)
    n_params = sum(p.numel() for p in model.parameters())
    print(f"[model] {n_params/1e6:.2f}M parameters")

    opt = torch.optim.AdamW(model.parameters(), lr=args.lr, weight_decay=0.01)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=args.steps)
    torch.set_num_threads(os.cpu_count() or 4)

    step = 0
    vanilla_eval = [e for e in examples if e[2] == "vanilla"]
    while step < args.steps:
        for idx, last, target in batch_iter(examples, args.batch, rng, device):
            logits = model(idx)
            picked = logits[torch.arange(idx.shape[0]), last]
            loss = F.cross_entropy(picked, target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            if step % 50 == 0 or step == args.steps:
                accs = {k: accuracy(model, examples, device, kinds={k})
                        for k in ["vanilla", "rag_true", "rag_counterfactual",
                                  "rag_corrupt_copy", "rag_noattr"]}
                print(f"[train] step {step} loss {loss.item():.4f} " +
                      " ".join(f"{k}={v:.2f}" for k, v in accs.items()))
            if step >= args.steps:
                break

    model.eval()
    weights_path = os.path.join(ASSETS, "model.bin")
    export_container(model, config, weights_path)
    with open(os.path.join(ASSETS, "config.json"), "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)
    print(f"[export] {weights_path} ({os.path.getsize(weights_path)/1e6:.1f} MB)")

    # container cross-check against torch on a few real sequences
    with torch.no_grad():
        worst = 0.0
        for inst in list(vanilla_by_fact.values())[:3]:
            ids = inst["token_ids"]
            ref = model(torch.tensor([ids]))[0, -1].numpy()
            got = numpy_forward(weights_path, config, ids)
            worst = max(worst, float(np.abs(ref - got).max()))
        print(f"[verify] container forward max-abs logit diff vs torch: {worst:.2e}")
        assert worst < 1e-3, "container export mismatch"

    report = {
        "seed": SEED,
        "n_facts": len(facts),
        "n_examples": len(examples),
        "example_kinds": dict(kinds),
        "params": n_params,
        "final_accuracy": {k: accuracy(model, examples, device, kinds={k})
                           for k in ["vanilla", "rag_true", "rag_counterfactual",
                                     "rag_corrupt_copy", "rag_noattr"]},
    }
    with open(os.path.join(ASSETS, "train_report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    print("[done]", json.dumps(report["final_accuracy"]))


if __name__ == "__main__":
    sys.exit(main())
