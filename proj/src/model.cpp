#include "ma3e/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ma3e/error.hpp"

namespace ma3e {

void validate(const ModelConfig& c) {
    if (c.p <= 0 || c.image_size <= 0 || c.image_size % c.p != 0)
        throw ValidationError("image_size must be a positive multiple of p");
    if (c.channels != 1 && c.channels != 3) throw ValidationError("channels must be 1 or 3");
    if (c.enc_dim <= 0 || c.dec_dim <= 0) throw ValidationError("model widths must be positive");
    if (c.enc_heads <= 0 || c.enc_dim % c.enc_heads != 0)
        throw ValidationError("enc_heads must divide enc_dim");
    if (c.dec_heads <= 0 || c.dec_dim % c.dec_heads != 0)
        throw ValidationError("dec_heads must divide dec_dim");
    if (c.enc_dim % 4 != 0 || c.dec_dim % 4 != 0)
        throw ValidationError("model widths must be multiples of 4 for 2D sine-cosine positions");
    if (c.enc_depth < 0 || c.dec_depth < 0) throw ValidationError("depths must be non-negative");
    if (c.mlp_ratio <= 0) throw ValidationError("mlp_ratio must be positive");
}

namespace {

constexpr double kNormEps = 1e-6;

template <class P, class Out>
void collect(P& params, Out& out) {
    const auto linear = [&](const std::string& name, auto& l) {
        out.push_back({name + ".weight", &l.weight});
        out.push_back({name + ".bias", &l.bias});
    };
    const auto norm = [&](const std::string& name, auto& n) {
        out.push_back({name + ".gamma", &n.gamma});
        out.push_back({name + ".beta", &n.beta});
    };
    const auto block = [&](const std::string& name, auto& b) {
        norm(name + ".norm1", b.norm1);
        linear(name + ".attn.qkv", b.qkv);
        linear(name + ".attn.proj", b.proj);
        norm(name + ".norm2", b.norm2);
        linear(name + ".mlp.fc1", b.fc1);
        linear(name + ".mlp.fc2", b.fc2);
    };
    linear("patch_embed", params.patch_embed);
    out.push_back({"angle_embed", &params.angle_embed});
    out.push_back({"mask_token", &params.mask_token});
    for (std::size_t i = 0; i < params.encoder_blocks.size(); ++i)
        block("encoder." + std::to_string(i), params.encoder_blocks[i]);
    norm("encoder_norm", params.encoder_norm);
    linear("enc_to_dec", params.enc_to_dec);
    for (std::size_t i = 0; i < params.decoder_blocks.size(); ++i)
        block("decoder." + std::to_string(i), params.decoder_blocks[i]);
    norm("decoder_norm", params.decoder_norm);
    linear("pred_head", params.pred_head);
}

}  // namespace

std::vector<NamedParam> learnable_params(ModelParams& params) {
    std::vector<NamedParam> out;
    collect(params, out);
    return out;
}

std::vector<ConstNamedParam> learnable_params(const ModelParams& params) {
    std::vector<ConstNamedParam> out;
    collect(params, out);
    return out;
}

std::size_t parameter_count(const ModelParams& params) {
    std::size_t n = 0;
    for (const auto& p : learnable_params(params)) n += p.value->size();
    return n;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z = params;
    for (auto& p : learnable_params(z)) p.value->fill(0.0);
    return z;
}

Matrix sincos_pos_table(int grid, int dim) {
    // First half of the features encodes the grid row, second half the column.
    const int half = dim / 2;
    const int quarter = half / 2;
    Matrix table(static_cast<std::size_t>(grid) * grid, dim);
    for (int r = 0; r < grid; ++r) {
        for (int c = 0; c < grid; ++c) {
            auto row = table.row(static_cast<std::size_t>(r) * grid + c);
            for (int i = 0; i < quarter; ++i) {
                const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
                row[i] = std::sin(r * omega);
                row[quarter + i] = std::cos(r * omega);
                row[half + i] = std::sin(c * omega);
                row[half + quarter + i] = std::cos(c * omega);
            }
        }
    }
    return table;
}

namespace {

LinearParams make_linear(int in, int out, Rng& rng) {
    LinearParams l{Matrix(out, in), Matrix(1, out, 0.0)};
    const double bound = std::sqrt(6.0 / (in + out));
    for (double& w : l.weight.data()) w = uniform(rng, -bound, bound);
    return l;
}

NormParams make_norm(int dim) { return {Matrix(1, dim, 1.0), Matrix(1, dim, 0.0)}; }

BlockParams make_block(int dim, int hidden, Rng& rng) {
    BlockParams b;
    b.norm1 = make_norm(dim);
    b.qkv = make_linear(dim, 3 * dim, rng);
    b.proj = make_linear(dim, dim, rng);
    b.norm2 = make_norm(dim);
    b.fc1 = make_linear(dim, hidden, rng);
    b.fc2 = make_linear(hidden, dim, rng);
    return b;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, Rng& rng) {
    validate(config);
    ModelParams m;
    m.patch_embed = make_linear(config.patch_dim(), config.enc_dim, rng);
    m.angle_embed = Matrix(1, config.enc_dim);
    for (double& v : m.angle_embed.data()) v = 0.02 * normal(rng);
    m.mask_token = Matrix(1, config.dec_dim);
    for (double& v : m.mask_token.data()) v = 0.02 * normal(rng);
    for (int i = 0; i < config.enc_depth; ++i)
        m.encoder_blocks.push_back(make_block(config.enc_dim, config.enc_dim * config.mlp_ratio, rng));
    m.encoder_norm = make_norm(config.enc_dim);
    m.enc_to_dec = make_linear(config.enc_dim, config.dec_dim, rng);
    for (int i = 0; i < config.dec_depth; ++i)
        m.decoder_blocks.push_back(make_block(config.dec_dim, config.dec_dim * config.mlp_ratio, rng));
    m.decoder_norm = make_norm(config.dec_dim);
    m.pred_head = make_linear(config.dec_dim, config.patch_dim(), rng);
    m.pos_embed_enc = sincos_pos_table(config.grid(), config.enc_dim);
    m.pos_embed_dec = sincos_pos_table(config.grid(), config.dec_dim);
    return m;
}

ModelParams init_params(const ModelConfig& config) {
    Rng rng(config.seed);
    return init_params(config, rng);
}

// ---------------------------------------------------------------------------
// Layer primitives

namespace {

void layer_norm_forward(const Matrix& x, const NormParams& n, Matrix& out, Matrix* xhat_out,
                        std::vector<double>* rstd_out) {
    const std::size_t rows = x.rows();
    const std::size_t d = x.cols();
    out = Matrix(rows, d);
    Matrix xhat(rows, d);
    std::vector<double> rstd(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const auto xi = x.row(i);
        double mean = 0.0;
        for (double v : xi) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xi) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(var + kNormEps);
        rstd[i] = r;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xi[j] - mean) * r;
            xhat(i, j) = h;
            out(i, j) = h * n.gamma(0, j) + n.beta(0, j);
        }
    }
    if (xhat_out) *xhat_out = std::move(xhat);
    if (rstd_out) *rstd_out = std::move(rstd);
}

// Accumulates dgamma/dbeta into g and adds dx into dx_acc.
void layer_norm_backward(const Matrix& dy, const Matrix& xhat, const std::vector<double>& rstd, const NormParams& n,
                         NormParams& g, Matrix& dx_acc) {
    const std::size_t rows = dy.rows();
    const std::size_t d = dy.cols();
    std::vector<double> dxhat(d);
    for (std::size_t i = 0; i < rows; ++i) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            g.gamma(0, j) += dy(i, j) * xhat(i, j);
            g.beta(0, j) += dy(i, j);
            dxhat[j] = dy(i, j) * n.gamma(0, j);
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat(i, j);
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j)
            dx_acc(i, j) += rstd[i] * (dxhat[j] - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
    }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 * 0.5));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

std::span<const double> bias_of(const LinearParams& l) { return l.bias.row(0); }

Matrix block_forward(const Matrix& x, const BlockParams& b, int heads, BlockCache* cache) {
    const std::size_t t = x.rows();
    const std::size_t d = x.cols();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    BlockCache local;
    BlockCache& c = cache ? *cache : local;
    layer_norm_forward(x, b.norm1, c.normed1, &c.xhat1, &c.rstd1);
    linear_forward(c.normed1, b.qkv.weight, bias_of(b.qkv), c.qkv);

    c.attn.assign(heads, Matrix(t, t));
    c.context = Matrix(t, d);
    std::vector<double> scores(t);
    for (int h = 0; h < heads; ++h) {
        const std::size_t qo = h * dh;
        const std::size_t ko = d + h * dh;
        const std::size_t vo = 2 * d + h * dh;
        Matrix& a = c.attn[h];
        for (std::size_t i = 0; i < t; ++i) {
            double mx = -INFINITY;
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < dh; ++k) s += c.qkv(i, qo + k) * c.qkv(j, ko + k);
                scores[j] = s * scale;
                mx = std::max(mx, scores[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < t; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                z += scores[j];
            }
            for (std::size_t j = 0; j < t; ++j) a(i, j) = scores[j] / z;
            for (std::size_t j = 0; j < t; ++j) {
                const double w = a(i, j);
                for (std::size_t k = 0; k < dh; ++k) c.context(i, qo + k) += w * c.qkv(j, vo + k);
            }
        }
    }
    Matrix attn_out;
    linear_forward(c.context, b.proj.weight, bias_of(b.proj), attn_out);
    c.mid = x;
    for (std::size_t k = 0; k < c.mid.size(); ++k) c.mid.data()[k] += attn_out.data()[k];

    layer_norm_forward(c.mid, b.norm2, c.normed2, &c.xhat2, &c.rstd2);
    linear_forward(c.normed2, b.fc1.weight, bias_of(b.fc1), c.hidden_pre);
    c.hidden = c.hidden_pre;
    for (double& v : c.hidden.data()) v = gelu(v);
    Matrix mlp_out;
    linear_forward(c.hidden, b.fc2.weight, bias_of(b.fc2), mlp_out);
    Matrix out = c.mid;
    for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] += mlp_out.data()[k];
    return out;
}

// Returns dL/dinput given dL/doutput; accumulates parameter gradients into g.
Matrix block_backward(const Matrix& dout, const BlockCache& c, const BlockParams& b, BlockParams& g, int heads) {
    const std::size_t t = dout.rows();
    const std::size_t d = dout.cols();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // MLP branch.
    Matrix dhidden;
    linear_backward(c.hidden, b.fc2.weight, dout, &dhidden, g.fc2.weight, g.fc2.bias.row(0));
    for (std::size_t k = 0; k < dhidden.size(); ++k) dhidden.data()[k] *= gelu_grad(c.hidden_pre.data()[k]);
    Matrix dnormed2;
    linear_backward(c.normed2, b.fc1.weight, dhidden, &dnormed2, g.fc1.weight, g.fc1.bias.row(0));
    Matrix dmid = dout;
    layer_norm_backward(dnormed2, c.xhat2, c.rstd2, b.norm2, g.norm2, dmid);

    // Attention branch.
    Matrix dcontext;
    linear_backward(c.context, b.proj.weight, dmid, &dcontext, g.proj.weight, g.proj.bias.row(0));
    Matrix dqkv(t, 3 * d);
    std::vector<double> da(t);
    for (int h = 0; h < heads; ++h) {
        const std::size_t qo = h * dh;
        const std::size_t ko = d + h * dh;
        const std::size_t vo = 2 * d + h * dh;
        const Matrix& a = c.attn[h];
        for (std::size_t i = 0; i < t; ++i) {
            // dA_ij = dctx_i . v_j ; dv_j += a_ij dctx_i
            double dot = 0.0;
            for (std::size_t j = 0; j < t; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < dh; ++k) {
                    s += dcontext(i, qo + k) * c.qkv(j, vo + k);
                    dqkv(j, vo + k) += a(i, j) * dcontext(i, qo + k);
                }
                da[j] = s;
                dot += s * a(i, j);
            }
            for (std::size_t j = 0; j < t; ++j) {
                const double ds = a(i, j) * (da[j] - dot) * scale;
                for (std::size_t k = 0; k < dh; ++k) {
                    dqkv(i, qo + k) += ds * c.qkv(j, ko + k);
                    dqkv(j, ko + k) += ds * c.qkv(i, qo + k);
                }
            }
        }
    }
    Matrix dnormed1;
    linear_backward(c.normed1, b.qkv.weight, dqkv, &dnormed1, g.qkv.weight, g.qkv.bias.row(0));
    Matrix dx = dmid;
    layer_norm_backward(dnormed1, c.xhat1, c.rstd1, b.norm1, g.norm1, dx);
    return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model stages

namespace {

void check_layout(const MaskLayout& layout, const ModelConfig& config) {
    validate(layout);
    if (layout.total() != config.num_patches())
        throw ValidationError("inconsistent layout: mask covers " + std::to_string(layout.total()) +
                              " patches, model expects " + std::to_string(config.num_patches()));
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto src = m.row(idx[k]);
        std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
}

Matrix embed_tokens(const Matrix& visible_patches, const std::vector<int>& visible, std::size_t crop_count,
                    const ModelParams& params, const ModelConfig& config) {
    Matrix tokens;
    linear_forward(visible_patches, params.patch_embed.weight, bias_of(params.patch_embed), tokens);
    for (std::size_t k = 0; k < visible.size(); ++k) {
        auto row = tokens.row(k);
        const auto pos = params.pos_embed_enc.row(visible[k]);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += pos[j];
        if (config.use_angle_embedding && k < crop_count) {
            const auto angle = params.angle_embed.row(0);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += angle[j];
        }
    }
    return tokens;
}

}  // namespace

Matrix embed_visible(const PatchSet& input, const MaskLayout& layout, const ModelParams& params,
                     const ModelConfig& config) {
    check_layout(layout, config);
    if (input.count() != config.num_patches() || input.dim() != config.patch_dim())
        throw ValidationError("inconsistent input: patch grid does not match the model config");
    const auto visible = layout.visible_order();
    return embed_tokens(gather_rows(input.patches, visible), visible, layout.crop_visible.size(), params, config);
}

Matrix embed_visible(const CompositeSample& sample, const MaskLayout& layout, const ModelParams& params,
                     const ModelConfig& config) {
    return embed_visible(patchify(sample.composite, config.p), layout, params, config);
}

Matrix encode(const Matrix& tokens, const ModelParams& params, const ModelConfig& config, ForwardCache* cache) {
    if (tokens.rows() == 0 || static_cast<int>(tokens.cols()) != config.enc_dim)
        throw ValidationError("encode: expected a non-empty token sequence of width enc_dim");
    Matrix x = tokens;
    if (cache) cache->encoder.assign(params.encoder_blocks.size(), {});
    for (std::size_t i = 0; i < params.encoder_blocks.size(); ++i)
        x = block_forward(x, params.encoder_blocks[i], config.enc_heads, cache ? &cache->encoder[i] : nullptr);
    Matrix out;
    if (cache) {
        layer_norm_forward(x, params.encoder_norm, out, &cache->enc_xhat, &cache->enc_rstd);
        cache->latents = out;
    } else {
        layer_norm_forward(x, params.encoder_norm, out, nullptr, nullptr);
    }
    return out;
}

ForwardOutput decode(const Matrix& latents, const MaskLayout& layout, const ModelParams& params,
                     const ModelConfig& config, ForwardCache* cache) {
    check_layout(layout, config);
    const auto visible = layout.visible_order();
    if (latents.rows() != visible.size() || latents.cols() != static_cast<std::size_t>(config.enc_dim))
        throw ValidationError("layout/latent mismatch");
    const std::size_t n = config.num_patches();
    const std::size_t dd = config.dec_dim;

    Matrix projected;
    linear_forward(latents, params.enc_to_dec.weight, bias_of(params.enc_to_dec), projected);
    Matrix x(n, dd);
    std::vector<char> filled(n, 0);
    for (std::size_t k = 0; k < visible.size(); ++k) {
        const auto src = projected.row(k);
        std::copy(src.begin(), src.end(), x.row(visible[k]).begin());
        filled[visible[k]] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        auto row = x.row(i);
        if (!filled[i]) {
            const auto m = params.mask_token.row(0);
            std::copy(m.begin(), m.end(), row.begin());
        }
        const auto pos = params.pos_embed_dec.row(i);
        for (std::size_t j = 0; j < dd; ++j) row[j] += pos[j];
    }

    if (cache) cache->decoder.assign(params.decoder_blocks.size(), {});
    for (std::size_t i = 0; i < params.decoder_blocks.size(); ++i)
        x = block_forward(x, params.decoder_blocks[i], config.dec_heads, cache ? &cache->decoder[i] : nullptr);

    Matrix normed;
    if (cache) {
        layer_norm_forward(x, params.decoder_norm, normed, &cache->dec_xhat, &cache->dec_rstd);
        cache->dec_normed = normed;
    } else {
        layer_norm_forward(x, params.decoder_norm, normed, nullptr, nullptr);
    }
    ForwardOutput out;
    linear_forward(normed, params.pred_head.weight, bias_of(params.pred_head), out.predictions);
    out.latents = latents;
    return out;
}

ForwardOutput forward(const PatchSet& input, const MaskLayout& layout, const ModelParams& params,
                      const ModelConfig& config, ForwardCache* cache) {
    check_layout(layout, config);
    if (input.count() != config.num_patches() || input.dim() != config.patch_dim())
        throw ValidationError("inconsistent input: patch grid does not match the model config");
    const auto visible = layout.visible_order();
    Matrix visible_patches = gather_rows(input.patches, visible);
    const Matrix tokens = embed_tokens(visible_patches, visible, layout.crop_visible.size(), params, config);
    if (cache) {
        cache->visible = visible;
        cache->visible_patches = std::move(visible_patches);
    }
    const Matrix latents = encode(tokens, params, config, cache);
    return decode(latents, layout, params, config, cache);
}

void backward(const ForwardCache& cache, const Matrix& d_predictions, const MaskLayout& layout,
              const ModelParams& params, const ModelConfig& config, ModelParams& grads) {
    const std::size_t n = config.num_patches();
    if (d_predictions.rows() != n || d_predictions.cols() != static_cast<std::size_t>(config.patch_dim()))
        throw ValidationError("backward: gradient shape does not match predictions");

    // Decoder head and norm.
    Matrix dnormed;
    linear_backward(cache.dec_normed, params.pred_head.weight, d_predictions, &dnormed, grads.pred_head.weight,
                    grads.pred_head.bias.row(0));
    Matrix dx(n, config.dec_dim);
    layer_norm_backward(dnormed, cache.dec_xhat, cache.dec_rstd, params.decoder_norm, grads.decoder_norm, dx);
    for (std::size_t i = params.decoder_blocks.size(); i-- > 0;)
        dx = block_backward(dx, cache.decoder[i], params.decoder_blocks[i], grads.decoder_blocks[i], config.dec_heads);

    // Scatter back: visible slots to the projection, masked slots to the mask token.
    const auto& visible = cache.visible;
    Matrix dprojected(visible.size(), config.dec_dim);
    std::vector<char> filled(n, 0);
    for (std::size_t k = 0; k < visible.size(); ++k) {
        const auto src = dx.row(visible[k]);
        std::copy(src.begin(), src.end(), dprojected.row(k).begin());
        filled[visible[k]] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (filled[i]) continue;
        const auto src = dx.row(i);
        for (std::size_t j = 0; j < src.size(); ++j) grads.mask_token(0, j) += src[j];
    }
    Matrix dlatents;
    linear_backward(cache.latents, params.enc_to_dec.weight, dprojected, &dlatents, grads.enc_to_dec.weight,
                    grads.enc_to_dec.bias.row(0));

    // Encoder.
    Matrix dtok(visible.size(), config.enc_dim);
    layer_norm_backward(dlatents, cache.enc_xhat, cache.enc_rstd, params.encoder_norm, grads.encoder_norm, dtok);
    for (std::size_t i = params.encoder_blocks.size(); i-- > 0;)
        dtok = block_backward(dtok, cache.encoder[i], params.encoder_blocks[i], grads.encoder_blocks[i],
                              config.enc_heads);

    // Embedding.
    linear_backward(cache.visible_patches, params.patch_embed.weight, dtok, nullptr, grads.patch_embed.weight,
                    grads.patch_embed.bias.row(0));
    if (config.use_angle_embedding) {
        for (std::size_t k = 0; k < layout.crop_visible.size(); ++k) {
            const auto src = dtok.row(k);
            for (std::size_t j = 0; j < src.size(); ++j) grads.angle_embed(0, j) += src[j];
        }
    }
}

}  // namespace ma3e
