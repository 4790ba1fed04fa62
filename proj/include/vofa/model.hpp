#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vofa/rng.hpp"
#include "vofa/tasks.hpp"
#include "vofa/tensor.hpp"
#include "vofa/video.hpp"

namespace vofa {

struct ModelError : std::runtime_error {
    explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

enum class Variant { full, fid };

inline const char* variant_name(Variant v) { return v == Variant::full ? "full" : "fid"; }

struct ModelConfig {
    int hidden = 64;
    int enc_layers = 2;
    int dec_layers = 2;
    int heads = 4;
    int ffn_multiple = 4;
    int vocab = 0;  // set from the tokenizer
    int patch_size = 16;
    int frame_px = 32;
    int max_frames = 8;
    int max_text_len = 32;
    Variant variant = Variant::full;
    bool fid_temporal_embeddings = false;
    bool tie_output = false;

    int patches_per_frame() const { return vofa::patches_per_frame(frame_px, frame_px, patch_size); }
    int patch_dim() const { return patch_size * patch_size * 3; }

    void validate() const {
        if (hidden % heads != 0)
            throw ModelError("hidden " + std::to_string(hidden) + " not divisible by heads " +
                             std::to_string(heads));
        if (max_frames < 8) throw ModelError("max_frames must be >= 8");
        if (vocab < 5) throw ModelError("vocab not set");
        (void)patches_per_frame();
    }
};

// Boolean allow-matrix over (query, key).
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::shared_ptr<const std::vector<uint8_t>> fill;  // 1 = disallowed (filled before softmax)

    static AttentionMask causal(int n) {
        auto m = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n) * n, 0);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) (*m)[static_cast<size_t>(i) * n + j] = 1;
        return {n, n, m};
    }

    // one block per (size) run along the diagonal; everything else disallowed
    static AttentionMask block_diagonal(const std::vector<int>& sizes) {
        int n = 0;
        for (int s : sizes) n += s;
        auto m = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n) * n, 1);
        int off = 0;
        for (int s : sizes) {
            for (int i = off; i < off + s; ++i)
                for (int j = off; j < off + s; ++j) (*m)[static_cast<size_t>(i) * n + j] = 0;
            off += s;
        }
        return {n, n, m};
    }

    bool allowed(int q, int k) const { return (*fill)[static_cast<size_t>(q) * cols + k] == 0; }
};

template <class R>
struct NamedParam {
    std::string name;
    Tensor<R>* tensor;
};

namespace detail {

template <class R>
struct AttnParams {
    Tensor<R> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <class R>
struct EncoderBlock {
    Tensor<R> ln1_g, ln1_b;
    AttnParams<R> attn;
    Tensor<R> ln2_g, ln2_b;
    Tensor<R> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class R>
struct DecoderBlock {
    Tensor<R> ln1_g, ln1_b;
    AttnParams<R> self_attn;
    Tensor<R> ln2_g, ln2_b;
    AttnParams<R> cross_attn;
    Tensor<R> ln3_g, ln3_b;
    Tensor<R> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

}  // namespace detail

// Parameters of the encoder-decoder video-to-text model. Temporal embeddings
// start at exactly zero so the freshly adapted model reproduces the
// image-backbone behavior bit for bit.
template <class R>
struct VideoToTextModel {
    ModelConfig cfg;
    Tensor<R> tok_emb;       // [V, D]
    Tensor<R> patch_w;       // [patch_dim, D]
    Tensor<R> patch_b;       // [D]
    Tensor<R> pos_spatial;   // [P, D], reused every frame
    Tensor<R> pos_temporal;  // [T_max, D], zero-initialized
    Tensor<R> pos_text;      // [max_text_len, D]
    std::vector<detail::EncoderBlock<R>> enc;
    std::vector<detail::DecoderBlock<R>> dec;
    Tensor<R> enc_ln_g, enc_ln_b;
    Tensor<R> dec_ln_g, dec_ln_b;
    Tensor<R> head_w;  // [D, V]; unused when cfg.tie_output
    Tensor<R> head_b;  // [V]

    static VideoToTextModel init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        VideoToTextModel m;
        m.cfg = cfg;
        const int d = cfg.hidden;
        // fan-in-scaled init keeps signal magnitude through every linear map,
        // which matters at these small widths
        auto gaussian = [&](const std::string& name, Shape shape, double std_dev) {
            Rng rng(seed, "init:" + name);
            Tensor<R> t(std::move(shape));
            for (int64_t i = 0; i < t.numel(); ++i) (*t.data)[i] = R(rng.normal(0.0, std_dev));
            t.set_requires_grad(true);
            return t;
        };
        auto normal = [&](const std::string& name, Shape shape) {
            const double std_dev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
            return gaussian(name, std::move(shape), std_dev);
        };
        auto table = [&](const std::string& name, Shape shape) {
            return gaussian(name, std::move(shape), 1.0 / std::sqrt(static_cast<double>(d)));
        };
        auto zeros = [&](Shape shape) {
            Tensor<R> t(std::move(shape));
            t.set_requires_grad(true);
            return t;
        };
        auto ones = [&](Shape shape) {
            Tensor<R> t = Tensor<R>::full(std::move(shape), R(1));
            t.set_requires_grad(true);
            return t;
        };

        m.tok_emb = table("tok_emb", {cfg.vocab, d});
        m.patch_w = normal("patch_w", {cfg.patch_dim(), d});
        m.patch_b = zeros({d});
        m.pos_spatial = table("pos_spatial", {cfg.patches_per_frame(), d});
        m.pos_temporal = zeros({cfg.max_frames, d});
        m.pos_text = table("pos_text", {cfg.max_text_len, d});

        auto make_attn = [&](const std::string& prefix) {
            detail::AttnParams<R> a;
            a.wq = normal(prefix + ".wq", {d, d});
            a.bq = zeros({d});
            a.wk = normal(prefix + ".wk", {d, d});
            a.bk = zeros({d});
            a.wv = normal(prefix + ".wv", {d, d});
            a.bv = zeros({d});
            a.wo = normal(prefix + ".wo", {d, d});
            a.bo = zeros({d});
            return a;
        };
        for (int l = 0; l < cfg.enc_layers; ++l) {
            detail::EncoderBlock<R> b;
            const std::string p = "enc." + std::to_string(l);
            b.ln1_g = ones({d});
            b.ln1_b = zeros({d});
            b.attn = make_attn(p + ".attn");
            b.ln2_g = ones({d});
            b.ln2_b = zeros({d});
            b.ffn_w1 = normal(p + ".ffn_w1", {d, d * cfg.ffn_multiple});
            b.ffn_b1 = zeros({d * cfg.ffn_multiple});
            b.ffn_w2 = normal(p + ".ffn_w2", {d * cfg.ffn_multiple, d});
            b.ffn_b2 = zeros({d});
            m.enc.push_back(std::move(b));
        }
        for (int l = 0; l < cfg.dec_layers; ++l) {
            detail::DecoderBlock<R> b;
            const std::string p = "dec." + std::to_string(l);
            b.ln1_g = ones({d});
            b.ln1_b = zeros({d});
            b.self_attn = make_attn(p + ".self");
            b.ln2_g = ones({d});
            b.ln2_b = zeros({d});
            b.cross_attn = make_attn(p + ".cross");
            b.ln3_g = ones({d});
            b.ln3_b = zeros({d});
            b.ffn_w1 = normal(p + ".ffn_w1", {d, d * cfg.ffn_multiple});
            b.ffn_b1 = zeros({d * cfg.ffn_multiple});
            b.ffn_w2 = normal(p + ".ffn_w2", {d * cfg.ffn_multiple, d});
            b.ffn_b2 = zeros({d});
            m.dec.push_back(std::move(b));
        }
        m.enc_ln_g = ones({d});
        m.enc_ln_b = zeros({d});
        m.dec_ln_g = ones({d});
        m.dec_ln_b = zeros({d});
        m.head_w = normal("head_w", {d, cfg.vocab});
        m.head_b = zeros({cfg.vocab});
        return m;
    }

    std::vector<NamedParam<R>> params() {
        std::vector<NamedParam<R>> out;
        auto add = [&](const std::string& name, Tensor<R>& t) { out.push_back({name, &t}); };
        add("tok_emb", tok_emb);
        add("patch_w", patch_w);
        add("patch_b", patch_b);
        add("pos_spatial", pos_spatial);
        add("pos_temporal", pos_temporal);
        add("pos_text", pos_text);
        auto add_attn = [&](const std::string& p, detail::AttnParams<R>& a) {
            add(p + ".wq", a.wq);
            add(p + ".bq", a.bq);
            add(p + ".wk", a.wk);
            add(p + ".bk", a.bk);
            add(p + ".wv", a.wv);
            add(p + ".bv", a.bv);
            add(p + ".wo", a.wo);
            add(p + ".bo", a.bo);
        };
        for (size_t l = 0; l < enc.size(); ++l) {
            const std::string p = "enc." + std::to_string(l);
            add(p + ".ln1_g", enc[l].ln1_g);
            add(p + ".ln1_b", enc[l].ln1_b);
            add_attn(p + ".attn", enc[l].attn);
            add(p + ".ln2_g", enc[l].ln2_g);
            add(p + ".ln2_b", enc[l].ln2_b);
            add(p + ".ffn_w1", enc[l].ffn_w1);
            add(p + ".ffn_b1", enc[l].ffn_b1);
            add(p + ".ffn_w2", enc[l].ffn_w2);
            add(p + ".ffn_b2", enc[l].ffn_b2);
        }
        for (size_t l = 0; l < dec.size(); ++l) {
            const std::string p = "dec." + std::to_string(l);
            add(p + ".ln1_g", dec[l].ln1_g);
            add(p + ".ln1_b", dec[l].ln1_b);
            add_attn(p + ".self", dec[l].self_attn);
            add(p + ".ln2_g", dec[l].ln2_g);
            add(p + ".ln2_b", dec[l].ln2_b);
            add_attn(p + ".cross", dec[l].cross_attn);
            add(p + ".ln3_g", dec[l].ln3_g);
            add(p + ".ln3_b", dec[l].ln3_b);
            add(p + ".ffn_w1", dec[l].ffn_w1);
            add(p + ".ffn_b1", dec[l].ffn_b1);
            add(p + ".ffn_w2", dec[l].ffn_w2);
            add(p + ".ffn_b2", dec[l].ffn_b2);
        }
        add("enc_ln_g", enc_ln_g);
        add("enc_ln_b", enc_ln_b);
        add("dec_ln_g", dec_ln_g);
        add("dec_ln_b", dec_ln_b);
        add("head_w", head_w);
        add("head_b", head_b);
        return out;
    }
};

namespace detail {

template <class R>
Tensor<R> attention(Tape<R>* tape, const AttnParams<R>& p, const Tensor<R>& q_in, const Tensor<R>& kv_in,
                    const AttentionMask* mask, int heads) {
    const int d = q_in.dim(1);
    const int dh = d / heads;
    auto q = add(tape, matmul(tape, q_in, p.wq), p.bq);
    auto k = add(tape, matmul(tape, kv_in, p.wk), p.bk);
    auto v = add(tape, matmul(tape, kv_in, p.wv), p.bv);
    std::vector<Tensor<R>> ctx;
    ctx.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = slice(tape, q, 1, h * dh, dh);
        auto kh = slice(tape, k, 1, h * dh, dh);
        auto vh = slice(tape, v, 1, h * dh, dh);
        auto scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), 1.0 / std::sqrt(double(dh)));
        if (mask) scores = masked_fill(tape, scores, mask->fill);
        auto weights = softmax(tape, scores, 1);
        ctx.push_back(matmul(tape, weights, vh));
    }
    auto merged = concat(tape, ctx, 1);
    return add(tape, matmul(tape, merged, p.wo), p.bo);
}

template <class R>
Tensor<R> ffn(Tape<R>* tape, const EncoderBlock<R>& b, const Tensor<R>& x) {
    auto h = gelu(tape, add(tape, matmul(tape, x, b.ffn_w1), b.ffn_b1));
    return add(tape, matmul(tape, h, b.ffn_w2), b.ffn_b2);
}

template <class R>
Tensor<R> ffn(Tape<R>* tape, const DecoderBlock<R>& b, const Tensor<R>& x) {
    auto h = gelu(tape, add(tape, matmul(tape, x, b.ffn_w1), b.ffn_b1));
    return add(tape, matmul(tape, h, b.ffn_w2), b.ffn_b2);
}

}  // namespace detail

// Pre-LN encoder stack over already-embedded tokens; `mask` restricts
// self-attention (nullptr = all-to-all).
template <class R>
Tensor<R> run_encoder_stack(Tape<R>* tape, const VideoToTextModel<R>& m, Tensor<R> h, const AttentionMask* mask) {
    for (const auto& b : m.enc) {
        auto normed = layer_norm(tape, h, b.ln1_g, b.ln1_b);
        h = add(tape, h, detail::attention(tape, b.attn, normed, normed, mask, m.cfg.heads));
        h = add(tape, h, detail::ffn(tape, b, layer_norm(tape, h, b.ln2_g, b.ln2_b)));
    }
    return layer_norm(tape, h, m.enc_ln_g, m.enc_ln_b);
}

// Embedded text tokens: token embedding + text positional embedding.
template <class R>
Tensor<R> embed_text(Tape<R>* tape, const VideoToTextModel<R>& m, const std::vector<int>& tokens) {
    if (static_cast<int>(tokens.size()) > m.cfg.max_text_len)
        throw ModelError("text length " + std::to_string(tokens.size()) + " exceeds max_text_len " +
                         std::to_string(m.cfg.max_text_len));
    auto emb = embedding_gather(tape, m.tok_emb, tokens);
    auto pos = slice(tape, m.pos_text, 0, 0, static_cast<int>(tokens.size()));
    return add(tape, emb, pos);
}

// Patch tokens of one frame: projection + spatial position embedding.
// The temporal embedding is added by the caller (it depends on the variant).
template <class R>
Tensor<R> embed_frame(Tape<R>* tape, const VideoToTextModel<R>& m, const VideoClip& clip, int frame) {
    Tensor<R> pixels(Shape{m.cfg.patches_per_frame(), m.cfg.patch_dim()},
                     patch_pixels<R>(clip, frame, m.cfg.patch_size));
    auto proj = add(tape, matmul(tape, pixels, m.patch_w), m.patch_b);
    return add(tape, proj, m.pos_spatial);
}

struct EncodeOptions {
    bool apply_temporal = true;             // temporal embeddings are zero-init, so skipping
                                            // this at init must change nothing
    const AttentionMask* mask_override = nullptr;  // full variant only
};

// Encoder states for a sample.
//
// full: [frame 0 patches ... frame T-1 patches, text], all-to-all attention,
// temporal embedding added to every patch token of its frame slot.
//
// fid: the encoder runs independently per frame on [frame patches, text];
// outputs are concatenated, and (optionally) the frame's temporal embedding
// is added to its block of encoder outputs.
template <class R>
Tensor<R> encode(Tape<R>* tape, const VideoToTextModel<R>& m, const Seq2SeqSample& sample,
                 const EncodeOptions& opts = {}) {
    const int frames = static_cast<int>(sample.frame_order.size());
    if (frames > m.cfg.max_frames)
        throw ModelError("clip has " + std::to_string(frames) + " frames, max_frames is " +
                         std::to_string(m.cfg.max_frames));
    const int p = m.cfg.patches_per_frame();
    auto text = embed_text(tape, m, sample.source_tokens);

    if (m.cfg.variant == Variant::full) {
        std::vector<Tensor<R>> parts;
        parts.reserve(static_cast<size_t>(frames) + 1);
        for (int i = 0; i < frames; ++i) {
            auto tok = embed_frame(tape, m, *sample.clip, sample.frame_order[static_cast<size_t>(i)]);
            if (opts.apply_temporal) {
                auto temporal = embedding_gather(tape, m.pos_temporal, std::vector<int>(static_cast<size_t>(p), i));
                tok = add(tape, tok, temporal);
            }
            parts.push_back(std::move(tok));
        }
        parts.push_back(text);
        auto h = concat(tape, parts, 0);
        return run_encoder_stack(tape, m, std::move(h), opts.mask_override);
    }

    // fid
    std::vector<Tensor<R>> outputs;
    outputs.reserve(static_cast<size_t>(frames));
    for (int i = 0; i < frames; ++i) {
        auto tok = embed_frame(tape, m, *sample.clip, sample.frame_order[static_cast<size_t>(i)]);
        std::vector<Tensor<R>> block = {std::move(tok), text};
        auto h = run_encoder_stack(tape, m, concat(tape, block, 0), nullptr);
        if (m.cfg.fid_temporal_embeddings && opts.apply_temporal) {
            const int block_len = h.dim(0);
            auto temporal =
                embedding_gather(tape, m.pos_temporal, std::vector<int>(static_cast<size_t>(block_len), i));
            h = add(tape, h, temporal);
        }
        outputs.push_back(std::move(h));
    }
    return concat(tape, outputs, 0);
}

// Decoder forward over `input_tokens` (BOS-led prefix), cross-attending to
// `enc_states`; returns one row of vocabulary logits per position.
template <class R>
Tensor<R> decoder_logits(Tape<R>* tape, const VideoToTextModel<R>& m, const std::vector<int>& input_tokens,
                         const Tensor<R>& enc_states) {
    const int n = static_cast<int>(input_tokens.size());
    auto h = embed_text(tape, m, input_tokens);
    AttentionMask causal = AttentionMask::causal(n);
    for (const auto& b : m.dec) {
        auto n1 = layer_norm(tape, h, b.ln1_g, b.ln1_b);
        h = add(tape, h, detail::attention(tape, b.self_attn, n1, n1, &causal, m.cfg.heads));
        auto n2 = layer_norm(tape, h, b.ln2_g, b.ln2_b);
        h = add(tape, h, detail::attention(tape, b.cross_attn, n2, enc_states, nullptr, m.cfg.heads));
        h = add(tape, h, detail::ffn(tape, b, layer_norm(tape, h, b.ln3_g, b.ln3_b)));
    }
    h = layer_norm(tape, h, m.dec_ln_g, m.dec_ln_b);
    if (m.cfg.tie_output) return matmul(tape, h, transpose(tape, m.tok_emb));
    return add(tape, matmul(tape, h, m.head_w), m.head_b);
}

// Teacher forcing: position t sees target tokens < t and all encoder states.
// sample.target_tokens must be BOS ... EOS framed.
template <class R>
Tensor<R> forward_teacher_forced(Tape<R>* tape, const VideoToTextModel<R>& m, const Seq2SeqSample& sample,
                                 const Tensor<R>& enc_states) {
    const auto& tgt = sample.target_tokens;
    if (tgt.size() < 2 || tgt.front() != TextTokenizer::kBos || tgt.back() != TextTokenizer::kEos)
        throw ModelError("target must be BOS ... EOS framed");
    std::vector<int> input(tgt.begin(), tgt.end() - 1);
    return decoder_logits(tape, m, input, enc_states);
}

// Shifted targets corresponding to forward_teacher_forced logits rows.
inline std::vector<int> teacher_forced_targets(const Seq2SeqSample& sample) {
    return std::vector<int>(sample.target_tokens.begin() + 1, sample.target_tokens.end());
}

}  // namespace vofa
