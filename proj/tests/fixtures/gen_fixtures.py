#!/usr/bin/env python3
"""Regenerates the test fixtures in this directory.

Everything here is computed with an independent float64 numpy reference of
the ViT forward pass (crop, bilinear resize, normalization, patching, pre-LN
encoder blocks, logit lens). The C++ engine never runs during generation.

    python3 tests/fixtures/gen_fixtures.py
"""

import io
import json
import math
import pathlib
import struct

import numpy as np
from PIL import Image
from scipy.special import erf

HERE = pathlib.Path(__file__).resolve().parent

TINY = dict(num_layers=2, num_heads=2, hidden_dim=8, patch_size=2,
            grid_side=2, num_classes=5, mlp_ratio=4, ln_eps=1e-6)
TINY["image_side"] = TINY["grid_side"] * TINY["patch_size"]
TINY["token_count"] = TINY["grid_side"] ** 2 + 1

MEAN = np.array([0.5, 0.5, 0.5])
STD = np.array([0.5, 0.5, 0.5])


# --------------------------------------------------------------------------
# safetensors writer

def write_safetensors(path, tensors, metadata=None):
    header = {}
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if arr.dtype == np.float16:
            dtype = "F16"
        else:
            arr = arr.astype("<f4")
            dtype = "F32"
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        header[name] = {"dtype": dtype, "shape": list(arr.shape),
                        "data_offsets": [offset, offset + len(raw)]}
        blobs.append(raw)
        offset += len(raw)
    if metadata:
        header["__metadata__"] = metadata
    hbytes = json.dumps(header, separators=(",", ":")).encode()
    hbytes += b" " * ((8 - len(hbytes) % 8) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for b in blobs:
            f.write(b)


# --------------------------------------------------------------------------
# reference model (float64)

def tiny_weights(cfg, seed):
    rng = np.random.default_rng(seed)
    D, C, P = cfg["hidden_dim"], cfg["num_classes"], cfg["patch_size"]
    T, M = cfg["token_count"], cfg["mlp_ratio"] * cfg["hidden_dim"]

    def n(*shape, s=0.5):
        return (rng.standard_normal(shape) * s).astype(np.float32)

    w = {
        "patch_embed.weight": n(3 * P * P, D, s=0.4),
        "patch_embed.bias": n(D, s=0.1),
        "pos_embed": n(T, D, s=0.3),
        "cls_token": n(D, s=0.8),
    }
    for l in range(cfg["num_layers"]):
        p = f"blocks.{l}."
        w[p + "ln1.weight"] = (1.0 + n(D, s=0.2)).astype(np.float32)
        w[p + "ln1.bias"] = n(D, s=0.1)
        w[p + "attn.qkv.weight"] = n(D, 3 * D, s=0.6)
        w[p + "attn.qkv.bias"] = n(3 * D, s=0.1)
        w[p + "attn.out.weight"] = n(D, D, s=0.4)
        w[p + "attn.out.bias"] = n(D, s=0.1)
        w[p + "ln2.weight"] = (1.0 + n(D, s=0.2)).astype(np.float32)
        w[p + "ln2.bias"] = n(D, s=0.1)
        w[p + "mlp.fc1.weight"] = n(D, M, s=0.4)
        w[p + "mlp.fc1.bias"] = n(M, s=0.1)
        w[p + "mlp.fc2.weight"] = n(M, D, s=0.3)
        w[p + "mlp.fc2.bias"] = n(D, s=0.1)
    w["final_ln.weight"] = (1.0 + n(D, s=0.2)).astype(np.float32)
    w["final_ln.bias"] = n(D, s=0.1)
    w["head.weight"] = n(D, C, s=0.7)
    w["head.bias"] = n(C, s=0.2)
    return w


def f64(w):
    return {k: v.astype(np.float64) for k, v in w.items()}


def layer_norm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return g * (x - mu) / np.sqrt(var + eps) + b


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mha(x, w, l, cfg):
    p = f"blocks.{l}."
    T, D, H = x.shape[0], cfg["hidden_dim"], cfg["num_heads"]
    dh = D // H
    qkv = x @ w[p + "attn.qkv.weight"] + w[p + "attn.qkv.bias"]
    q, k, v = qkv[:, :D], qkv[:, D:2 * D], qkv[:, 2 * D:]
    q = q.reshape(T, H, dh).transpose(1, 0, 2)
    k = k.reshape(T, H, dh).transpose(1, 0, 2)
    v = v.reshape(T, H, dh).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(D / H)
    attn = softmax(scores)
    o = (attn @ v).transpose(1, 0, 2).reshape(T, D)
    out = o @ w[p + "attn.out.weight"] + w[p + "attn.out.bias"]
    return out, attn, scores, (q, k, v)


def block(x, w, l, cfg):
    p = f"blocks.{l}."
    eps = cfg["ln_eps"]
    a, attn, scores, qkv = mha(layer_norm(x, w[p + "ln1.weight"], w[p + "ln1.bias"], eps), w, l, cfg)
    u = x + a
    h = layer_norm(u, w[p + "ln2.weight"], w[p + "ln2.bias"], eps)
    h = gelu(h @ w[p + "mlp.fc1.weight"] + w[p + "mlp.fc1.bias"])
    y = u + h @ w[p + "mlp.fc2.weight"] + w[p + "mlp.fc2.bias"]
    return y, attn, scores, qkv


def head(cls, w, cfg):
    z = layer_norm(cls, w["final_ln.weight"], w["final_ln.bias"], cfg["ln_eps"])
    return z @ w["head.weight"] + w["head.bias"]


# --------------------------------------------------------------------------
# reference preprocessing

def center_crop(img):
    h, w, _ = img.shape
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return img[top:top + s, left:left + s]


def resize_bilinear(img, side):
    h, w, _ = img.shape
    src = img.astype(np.float64)
    out = np.zeros((side, side, 3))
    for oy in range(side):
        sy = min(max((oy + 0.5) * h / side - 0.5, 0.0), h - 1)
        y0 = int(math.floor(sy)); y1 = min(y0 + 1, h - 1); fy = sy - y0
        for ox in range(side):
            sx = min(max((ox + 0.5) * w / side - 0.5, 0.0), w - 1)
            x0 = int(math.floor(sx)); x1 = min(x0 + 1, w - 1); fx = sx - x0
            top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
            out[oy, ox] = top * (1 - fy) + bot * fy
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def patchify(norm, P):
    side = norm.shape[0]
    g = side // P
    rows = []
    for gr in range(g):
        for gc in range(g):
            rows.append(norm[gr * P:(gr + 1) * P, gc * P:(gc + 1) * P, :].reshape(-1))
    return np.stack(rows)


def forward(patches, w, cfg):
    L = cfg["num_layers"]
    x = patches @ w["patch_embed.weight"] + w["patch_embed.bias"]
    x = np.vstack([w["cls_token"][None, :], x]) + w["pos_embed"]
    embedded = x.copy()
    cls = [x[0].copy()]
    hidden = [x.copy()]
    attn_all, scores_all, qkv_all = [], [], []
    for l in range(L):
        x, attn, scores, qkv = block(x, w, l, cfg)
        attn_all.append(attn); scores_all.append(scores); qkv_all.append(qkv)
        cls.append(x[0].copy())
        hidden.append(x.copy())
    cls = np.stack(cls)
    lens = np.stack([head(c, w, cfg) for c in cls])
    logits = lens[-1]
    probs = softmax(logits)
    return dict(tokens_embedded=embedded, attention=np.stack(attn_all),
                scores=np.stack(scores_all), qkv=qkv_all, hidden=np.stack(hidden),
                cls_per_layer=cls, logit_lens=lens, final_logits=logits,
                probabilities=probs, predicted_class=int(np.argmax(probs)))


def tolist(a):
    return np.asarray(a, dtype=np.float64).tolist()


# --------------------------------------------------------------------------

def gen_tiny():
    cfg = TINY
    w32 = tiny_weights(cfg, seed=20260101)
    write_safetensors(HERE / "tiny.safetensors", w32,
                      metadata={"num_heads": str(cfg["num_heads"]),
                                "ln_eps": repr(cfg["ln_eps"])})
    w = f64(w32)

    # 8 wide x 6 tall so center-crop and resize both run
    rng = np.random.default_rng(7)
    img = rng.integers(0, 256, size=(6, 8, 3), dtype=np.uint8)
    Image.fromarray(img, "RGB").save(HERE / "golden.png")

    cropped = center_crop(img)
    resized = resize_bilinear(cropped, cfg["image_side"])
    norm = (resized.astype(np.float64) / 255.0 - MEAN) / STD
    patches = patchify(norm, cfg["patch_size"])
    tr = forward(patches, w, cfg)

    # isolated sublayer checks on a random token matrix
    x = rng.standard_normal((cfg["token_count"], cfg["hidden_dim"])).astype(np.float32)
    mha_out, mha_attn, _, _ = mha(x.astype(np.float64), w, 0, cfg)
    blk_out, _, _, _ = block(x.astype(np.float64), w, 0, cfg)
    cls_in = rng.standard_normal(cfg["hidden_dim"]).astype(np.float32)
    cls_logits = head(cls_in.astype(np.float64), w, cfg)

    q, k, v = tr["qkv"][0]
    golden = {
        "config": cfg,
        "image": "golden.png",
        "resized_pixels": resized.reshape(-1).tolist(),
        "patches": tolist(patches),
        "tokens_embedded": tolist(tr["tokens_embedded"]),
        "attention": tolist(tr["attention"]),
        "scores": tolist(tr["scores"]),
        "layer0_q": tolist(q), "layer0_k": tolist(k), "layer0_v": tolist(v),
        "hidden_states": tolist(tr["hidden"]),
        "cls_per_layer": tolist(tr["cls_per_layer"]),
        "logit_lens": tolist(tr["logit_lens"]),
        "final_logits": tolist(tr["final_logits"]),
        "probabilities": tolist(tr["probabilities"]),
        "predicted_class": tr["predicted_class"],
        "sublayer": {
            "input": tolist(x),
            "mha_output": tolist(mha_out),
            "mha_attention": tolist(mha_attn),
            "block_output": tolist(blk_out),
            "cls_input": tolist(cls_in),
            "cls_logits": tolist(cls_logits),
            "cls_probabilities": tolist(softmax(cls_logits)),
        },
    }
    with open(HERE / "tiny_golden.json", "w") as f:
        json.dump(golden, f, indent=1)
    with open(HERE / "tiny_labels.txt", "w") as f:
        f.write("\n".join(["tabby cat", "golden retriever", "pickup truck",
                           "espresso", "volcano"]) + "\n")


def gen_codec_fixtures():
    Image.new("RGB", (1, 1), (255, 0, 0)).save(HERE / "red_1x1.png")
    Image.fromarray(np.array([[0, 100], [200, 255]], dtype=np.uint8), "L").save(HERE / "gray_2x2.png")
    Image.new("RGBA", (1, 1), (0, 0, 0, 128)).save(HERE / "black_alpha128_1x1.png")

    px = np.array([[[250, 10, 10], [10, 240, 20]], [[20, 20, 230], [128, 128, 128]]], dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(px, "RGB").save(buf, format="JPEG", quality=100, subsampling=0)
    (HERE / "rgb_2x2.jpg").write_bytes(buf.getvalue())
    decoded = np.asarray(Image.open(io.BytesIO(buf.getvalue())).convert("RGB"))
    with open(HERE / "rgb_2x2_expected.json", "w") as f:
        json.dump({"width": 2, "height": 2, "pixels": decoded.reshape(-1).tolist()}, f)

    # smooth gradient at the large-model input resolution
    yy, xx = np.mgrid[0:96, 0:96]
    grad = np.stack([xx * 255 // 95, yy * 255 // 95, (xx + yy) * 255 // 190], axis=-1).astype(np.uint8)
    Image.fromarray(grad, "RGB").save(HERE / "gradient_96.png")


def gen_container_fixtures():
    write_safetensors(HERE / "one_tensor.safetensors",
                      {"x": np.array([[1, 2], [3, 4]], dtype=np.float32)})
    half = np.array([0.5, -2.0, 65504.0, 1.0e-4, 3.140625], dtype=np.float16)
    write_safetensors(HERE / "half.safetensors", {"h": half})
    with open(HERE / "half_expected.json", "w") as f:
        json.dump([float(v) for v in half.astype(np.float32)], f)
    write_safetensors(HERE / "empty.safetensors", {})


if __name__ == "__main__":
    gen_tiny()
    gen_codec_fixtures()
    gen_container_fixtures()
