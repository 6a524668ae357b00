#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vsmk/autograd.hpp"
#include "vsmk/errors.hpp"
#include "vsmk/model_config.hpp"
#include "vsmk/nn.hpp"
#include "vsmk/ops.hpp"
#include "vsmk/ss2d.hpp"

namespace vsmk::backbone {

using nn::Binder;
using nn::Init;

template <typename T>
Var<T> conv_unit(Binder<T>& bn, const std::string& p, Var<T> x, std::size_t cin, std::size_t cout,
                 std::size_t k, std::size_t stride, std::size_t pad, bool act = true) {
    Var<T> w = bn(p + ".w", {cout, cin, k, k}, Init::KaimingUniform);
    Var<T> b = bn(p + ".b", {cout}, Init::Zeros);
    Var<T> y = ops::conv2d(x, w, b, stride, pad);
    Var<T> g = bn(p + ".norm.g", {cout}, Init::Ones);
    Var<T> be = bn(p + ".norm.b", {cout}, Init::Zeros);
    y = ops::channel_norm(y, g, be);
    return act ? ops::relu(y) : y;
}

// Downsampling residual stage: 3x3 stride-2 + 3x3 main path against a 1x1
// stride-2 projection skip, joined before the trailing activation.
template <typename T>
Var<T> residual_stage(Binder<T>& bn, const std::string& p, Var<T> x, std::size_t cin,
                      std::size_t cout) {
    Var<T> main = conv_unit(bn, p + ".conv1", x, cin, cout, 3, 2, 1);
    main = conv_unit(bn, p + ".conv2", main, cout, cout, 3, 1, 1, /*act=*/false);
    Var<T> skip = conv_unit(bn, p + ".skip", x, cin, cout, 1, 2, 0, /*act=*/false);
    return ops::relu(ops::add(main, skip));
}

// Compact convolutional encoder: strided stem plus two downsampling residual
// stages; spatial extent shrinks by 8, channels grow to 4x the stem width.
template <typename T>
Var<T> conv_encoder(Binder<T>& bn, const std::string& p, Var<T> x, std::size_t stem) {
    Var<T> y = conv_unit(bn, p + ".stem", x, 3, stem, 3, 2, 1);
    y = residual_stage(bn, p + ".stage1", y, stem, 2 * stem);
    y = residual_stage(bn, p + ".stage2", y, 2 * stem, 4 * stem);
    return y;
}

// Non-overlapping 4x4 patchify for the pure-SSM variant.
template <typename T>
Var<T> patch_embed(Binder<T>& bn, const std::string& p, Var<T> x, std::size_t cout) {
    Var<T> w = bn(p + ".w", {cout, 3, 4, 4}, Init::KaimingUniform);
    Var<T> b = bn(p + ".b", {cout}, Init::Zeros);
    Var<T> y = ops::conv2d(x, w, b, /*stride=*/4, /*pad=*/0);
    Var<T> g = bn(p + ".norm.g", {cout}, Init::Ones);
    Var<T> be = bn(p + ".norm.b", {cout}, Init::Zeros);
    return ops::channel_norm(y, g, be);
}

// Binds one four-path selective-scan parameter set (shared across the four
// scan directions of a block). The raw state-decay parameter is mapped through
// -softplus so the recurrence stays contractive; its initial values place the
// n-th state pole at -(n+1).
template <typename T>
struct BlockScanParams {
    ss2d::SelectiveVars<T> sp;
    Var<T> a;  // strictly negative state decay, [N]
};

template <typename T>
BlockScanParams<T> bind_scan_params(Binder<T>& bn, const std::string& p, std::size_t d,
                                    std::size_t n_state, std::size_t rank) {
    BlockScanParams<T> out;
    out.sp.w_dt_low = bn(p + ".w_dt_low", {rank, d}, Init::KaimingUniform);
    out.sp.w_dt_up = bn(p + ".w_dt_up", {d, rank}, Init::KaimingUniform);
    out.sp.b_dt = bn(p + ".b_dt", {d}, Init::Zeros);
    out.sp.w_B = bn(p + ".w_in", {n_state, d}, Init::KaimingUniform);
    out.sp.b_B = bn(p + ".b_in", {n_state}, Init::Zeros);
    out.sp.w_C = bn(p + ".w_out", {n_state, d}, Init::KaimingUniform);
    out.sp.b_C = bn(p + ".b_out", {n_state}, Init::Zeros);
    Var<T> a_raw = bn.bind(p + ".a_raw", {n_state}, [](Rng&, Tensor<T>& t) {
        for (std::size_t n = 0; n < t.size(); ++n)
            t.data()[n] = static_cast<T>(std::log(std::expm1(static_cast<double>(n) + 1.0)));
    });
    out.a = ops::neg(ops::softplus(a_raw));
    return out;
}

// Channel-split mixing block: the first half of the channels passes through
// two 3x3 conv units, the second half through a token-normalized four-path 2D
// selective scan with a residual connection; halves are re-concatenated, so
// output channels equal input channels.
template <typename T>
Var<T> hybrid_block(Binder<T>& bn, const std::string& p, Var<T> x, std::size_t C, std::size_t H,
                    std::size_t W, std::size_t n_state, std::size_t rank) {
    Tape<T>& t = bn.tape();
    const std::size_t B = t.val(x).shape(0);
    const std::size_t C2 = C / 2;

    Var<T> xc = ops::slice(x, /*axis=*/1, 0, C2);
    Var<T> xs = ops::slice(x, /*axis=*/1, C2, C);

    Var<T> yc = conv_unit(bn, p + ".conv1", xc, C2, C2, 3, 1, 1);
    yc = conv_unit(bn, p + ".conv2", yc, C2, C2, 3, 1, 1);

    // [B, C2, H, W] -> tokens [B*H*W, C2], one grid per batch row block.
    Var<T> tokens = ops::reshape(ops::permute(xs, {0, 2, 3, 1}), {B * H * W, C2});
    Var<T> g = bn(p + ".ln.g", {C2}, Init::Ones);
    Var<T> be = bn(p + ".ln.b", {C2}, Init::Zeros);
    Var<T> normed = ops::layer_norm_rows(tokens, g, be);

    BlockScanParams<T> scan = bind_scan_params(bn, p + ".scan", C2, n_state, rank);
    const std::array<const ss2d::SelectiveVars<T>*, 4> paths{&scan.sp, &scan.sp, &scan.sp,
                                                             &scan.sp};
    std::vector<Var<T>> per_item;
    per_item.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        Var<T> tb = ops::slice(normed, /*axis=*/0, b * H * W, (b + 1) * H * W);
        per_item.push_back(ss2d::ss2d_forward_taped(tb, H, W, scan.a, paths));
    }
    Var<T> scanned = B == 1 ? per_item[0] : ops::concat(per_item, /*axis=*/0);
    Var<T> ys = ops::add(tokens, scanned);
    ys = ops::permute(ops::reshape(ys, {B, H, W, C2}), {0, 3, 1, 2});

    return ops::concat(std::vector<Var<T>>{yc, ys}, /*axis=*/1);
}

// Full backbone: images [B, 3, S, S] -> features [B, D].
template <typename T>
Var<T> backbone_features(Binder<T>& bn, const std::string& p, Var<T> x,
                         const model::ModelConfig& cfg) {
    Var<T> y;
    if (cfg.variant == model::Variant::Vssm)
        y = patch_embed(bn, p + ".patch", x, cfg.embed_channels);
    else
        y = conv_encoder(bn, p + ".enc", x, cfg.stem_channels);

    const std::size_t C = cfg.block_channels();
    const std::size_t G = cfg.grid_size();
    for (std::size_t i = 0; i < cfg.n_blocks(); ++i)
        y = hybrid_block(bn, p + ".block" + std::to_string(i), y, C, G, G, cfg.n_state,
                         cfg.dt_rank);

    Var<T> pooled = ops::global_avg_pool(y);  // [B, C]
    Var<T> w = bn(p + ".head.w", {cfg.feature_dim, C}, Init::KaimingUniform);
    Var<T> b = bn(p + ".head.b", {cfg.feature_dim}, Init::Zeros);
    return ops::linear(pooled, w, b);
}

}  // namespace vsmk::backbone
