#include "cd/model.hpp"

#include "cd/common.hpp"

namespace cd {

namespace {

std::vector<int> to_vec(const std::array<int, 4>& a) {
    return {a.begin(), a.end()};
}

void check_pair(const torch::Tensor& i1, const torch::Tensor& i2, bool with_scr,
                int window) {
    if (i1.sizes() != i2.sizes()) {
        throw GeometryError("image pair geometry mismatch: " + shape_str(i1) + " vs " +
                            shape_str(i2));
    }
    if (i1.dim() != 4 || i1.size(1) != 3) {
        throw ShapeError("expected (B,3,H,W) images, got " + shape_str(i1));
    }
    const auto h = i1.size(2), w = i1.size(3);
    if (h % 32 != 0 || w % 32 != 0) {
        throw ShapeError("tile sides must be divisible by 32, got " + shape_str(i1));
    }
    if (with_scr && ((h / 16) % window != 0 || (w / 16) % window != 0)) {
        throw ShapeError("with the SCR branch, tile sides must be multiples of " +
                         std::to_string(16 * window));
    }
}

}  // namespace

TripleBranchNetImpl::TripleBranchNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cnn = register_module("cnn", CnnBranch(cfg.cnn_widths));
    pvt = register_module("pvt", PvtBranch(cfg.pvt_widths, cfg.pvt_heads, cfg.pvt_depths,
                                           cfg.pvt_sr_ratios, cfg.pvt_mlp_ratios));
    isci_img = register_module(
        "isci_img", Isci(to_vec(cfg.cnn_widths), to_vec(cfg.pvt_widths)));
    isff_img = register_module(
        "isff_img", Isff(to_vec(cfg.cnn_widths), to_vec(cfg.pvt_widths),
                         std::vector<int>{4, 8, 16, 32}, cfg.a_width));
    if (cfg.enable_scr) {
        scr = register_module("scr", ScrBranch(cfg.scr_widths, cfg.swin_window,
                                               cfg.swin_heads));
        const int deep = cfg.scr_widths[4];
        isci_scr = register_module(
            "isci_scr", Isci(std::vector<int>{deep}, std::vector<int>{deep}));
        isff_scr = register_module(
            "isff_scr", Isff(std::vector<int>{deep}, std::vector<int>{deep},
                             std::vector<int>{16}, cfg.a_width));
    }
    for (int j = 0; j < 3; ++j) {
        fuse_[j] = register_module("fuse" + std::to_string(j + 1),
                                   FuseBranches(cfg.a_width, cfg.d_width));
        decode_half_[j] = register_module(
            "decode_half" + std::to_string(j + 1),
            DecodeStep(cfg.scr_widths[1], cfg.d_width, cfg.pvf_export_width,
                       cfg.dtilde_width));
        decode_full_[j] = register_module(
            "decode_full" + std::to_string(j + 1),
            DecodeStep(cfg.scr_widths[0], cfg.dtilde_width, cfg.pvf_export_width,
                       cfg.dtilde_width));
    }
    ensemble = register_module("heads", EnsembleHead(cfg.dtilde_width));
    if (cfg.ccr_mode == CcrMode::kCcr) {
        ccr = register_module("ccr",
                              CcrBranch(cfg.frames, cfg.ccr_width, cfg.pvf_export_width));
    } else if (cfg.ccr_mode == CcrMode::kTemporal) {
        temporal = register_module(
            "temporal", TemporalBranch(cfg.frames, cfg.ccr_width * 2, cfg.d_width));
        for (int j = 0; j < 3; ++j) {
            temporal_inject_[j] = register_module(
                "temporal_inject" + std::to_string(j + 1),
                torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(2 * cfg.d_width, cfg.d_width, 1)));
        }
    }
}

TripleForward TripleBranchNetImpl::forward_full(const torch::Tensor& image_pre,
                                                const torch::Tensor& image_post) {
    check_pair(image_pre, image_post, cfg_.enable_scr, cfg_.swin_window);
    const auto i1 = nhwc(image_pre);
    const auto i2 = nhwc(image_post);
    const auto b = i1.size(0);
    const auto s = i1.size(-1);
    const auto opts = i1.options();

    TripleForward out;

    // Eq-style feature extraction: local, global and mixed features
    auto f_c1 = cnn(i1);
    auto f_c2 = cnn(i2);
    auto f_t1 = pvt(i1);
    auto f_t2 = pvt(i2);

    // slot 1 and 2: per-image interaction of CNN and transformer pyramids
    {
        auto [ia, ib] = isci_img->forward(f_c1, f_t1);
        auto a_slot = isff_img->forward(ia, ib);
        for (int j = 0; j < 3; ++j) out.a[j][0] = a_slot[j];
    }
    {
        auto [ia, ib] = isci_img->forward(f_c2, f_t2);
        auto a_slot = isff_img->forward(ia, ib);
        for (int j = 0; j < 3; ++j) out.a[j][1] = a_slot[j];
    }

    // slot 3: structured change relation features from the serial branch
    torch::Tensor sd1_full, sd1_half, sd2_full, sd2_half;
    if (cfg_.enable_scr) {
        auto so = scr->forward_pair(i1, i2);
        auto [is1, is2] = isci_scr->forward(std::vector<torch::Tensor>{so.f_s_1},
                                            std::vector<torch::Tensor>{so.f_s_2});
        auto a_slot = isff_scr->forward(is1, is2);
        for (int j = 0; j < 3; ++j) out.a[j][2] = a_slot[j];
        sd1_full = so.f_sd_1_full;
        sd1_half = so.f_sd_1_half;
        sd2_full = so.f_sd_2_full;
        sd2_half = so.f_sd_2_half;
    } else {
        for (int j = 0; j < 3; ++j) out.a[j][2] = torch::zeros_like(out.a[j][0]);
        sd1_full = torch::zeros({b, cfg_.scr_widths[0], s, s}, opts);
        sd2_full = torch::zeros_like(sd1_full);
        sd1_half = torch::zeros({b, cfg_.scr_widths[1], s / 2, s / 2}, opts);
        sd2_half = torch::zeros_like(sd1_half);
    }

    // merge the three branch slots per scale
    for (int j = 0; j < 3; ++j) {
        out.d[j] = fuse_[j]->forward(out.a[j][0], out.a[j][1], out.a[j][2]);
    }

    // continuous change relation features (or their ablation substitutes)
    torch::Tensor stack;
    if (cfg_.ccr_mode != CcrMode::kNone) {
        stack = build_pvf(i1, i2, cfg_.frames);
    }
    if (cfg_.ccr_mode == CcrMode::kCcr) {
        auto co = ccr(stack);
        out.f_pvf_1 = co.f_pvf_1;
        out.f_pvf_2 = co.f_pvf_2;
        out.aux_prob = torch::sigmoid(co.supervision_logits).squeeze(1);
    } else {
        out.f_pvf_1 = torch::zeros({b, cfg_.pvf_export_width, s / 2, s / 2}, opts);
        out.f_pvf_2 = torch::zeros({b, cfg_.pvf_export_width, s, s}, opts);
    }
    if (cfg_.ccr_mode == CcrMode::kTemporal) {
        auto to = temporal(stack);
        out.d[0] = temporal_inject_[0](torch::cat({out.d[0], to.deep_s8}, 1));
        out.d[1] = temporal_inject_[1](torch::cat({out.d[1], to.deep_s4}, 1));
        out.d[2] = temporal_inject_[2](torch::cat({out.d[2], to.deep_s4}, 1));
        out.aux_prob = torch::sigmoid(to.supervision_logits).squeeze(1);
    }

    // twice-executed detail decoding per head; slot 1 sits one scale deeper
    std::vector<torch::Tensor> d_tildes;
    for (int j = 0; j < 3; ++j) {
        auto d = j == 0 ? up2(out.d[j]) : out.d[j];
        auto half = decode_half_[j]->forward(d, sd1_half, sd2_half, out.f_pvf_1);
        auto full = decode_full_[j]->forward(half, sd1_full, sd2_full, out.f_pvf_2);
        out.d_tilde[j] = full;
        d_tildes.push_back(full);
    }

    auto [cm, probs] = ensemble->forward(d_tildes);
    out.cm = cm;
    out.head_probs = probs;
    return out;
}

ForwardResult TripleBranchNetImpl::detect(const torch::Tensor& image_pre,
                                          const torch::Tensor& image_post) {
    auto full = forward_full(image_pre, image_post);
    return ForwardResult{full.cm, full.head_probs, full.aux_prob};
}

// ------------------------------------------------------------- SiamBaseline

namespace {
torch::nn::Sequential baseline_stage(int in_ch, int out_ch, int stride) {
    return torch::nn::Sequential(ConvUnit(in_ch, out_ch, stride), ConvUnit(out_ch, out_ch, 1));
}
}  // namespace

SiamBaselineImpl::SiamBaselineImpl(const ModelConfig& cfg) : cfg_(cfg) {
    const auto& w = cfg.baseline_widths;
    enc1 = register_module("enc1", baseline_stage(3, w[0], 1));       // S
    enc2 = register_module("enc2", baseline_stage(w[0], w[1], 2));    // S/2
    enc3 = register_module("enc3", baseline_stage(w[1], w[2], 2));    // S/4
    enc4 = register_module("enc4", baseline_stage(w[2], w[3], 2));    // S/8
    dec4 = register_module("dec4",
                           torch::nn::Sequential(ConvUnit(2 * w[3], w[3], 1)));
    dec3 = register_module("dec3",
                           torch::nn::Sequential(ConvUnit(w[3] + 2 * w[2], w[2], 1)));
    const int pvf = cfg.pvf_export_width;
    dec2 = register_module("dec2", DecodeStep(w[1], w[2], pvf, w[1]));
    dec1 = register_module("dec1", DecodeStep(w[0], w[1], pvf, w[0]));
    head = register_module("head",
                           torch::nn::Conv2d(torch::nn::Conv2dOptions(w[0], 1, 1)));
    if (cfg.ccr_mode == CcrMode::kCcr) {
        ccr = register_module("ccr", CcrBranch(cfg.frames, cfg.ccr_width, pvf));
    } else if (cfg.ccr_mode == CcrMode::kTemporal) {
        temporal = register_module("temporal",
                                   TemporalBranch(cfg.frames, cfg.ccr_width * 2, w[3]));
        inject4 = register_module(
            "inject4", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * w[3], w[3], 1)));
        inject3 = register_module(
            "inject3", torch::nn::Conv2d(torch::nn::Conv2dOptions(w[3] + w[2], w[2], 1)));
    }
}

ForwardResult SiamBaselineImpl::detect(const torch::Tensor& image_pre,
                                       const torch::Tensor& image_post) {
    check_pair(image_pre, image_post, false, 1);
    const auto i1 = nhwc(image_pre);
    const auto i2 = nhwc(image_post);
    const auto b = i1.size(0);
    const auto s = i1.size(-1);
    const auto opts = i1.options();

    auto e1a = enc1->forward(i1);
    auto e2a = enc2->forward(e1a);
    auto e3a = enc3->forward(e2a);
    auto e4a = enc4->forward(e3a);
    auto e1b = enc1->forward(i2);
    auto e2b = enc2->forward(e1b);
    auto e3b = enc3->forward(e2b);
    auto e4b = enc4->forward(e3b);

    torch::Tensor stack;
    if (cfg_.ccr_mode != CcrMode::kNone) {
        stack = build_pvf(i1, i2, cfg_.frames);
    }

    auto d4 = dec4->forward(torch::cat({e4a, e4b}, 1));  // S/8
    std::optional<torch::Tensor> aux;
    torch::Tensor f_pvf_1, f_pvf_2;
    if (cfg_.ccr_mode == CcrMode::kCcr) {
        auto co = ccr(stack);
        f_pvf_1 = co.f_pvf_1;
        f_pvf_2 = co.f_pvf_2;
        aux = torch::sigmoid(co.supervision_logits).squeeze(1);
    } else {
        f_pvf_1 = torch::zeros({b, cfg_.pvf_export_width, s / 2, s / 2}, opts);
        f_pvf_2 = torch::zeros({b, cfg_.pvf_export_width, s, s}, opts);
    }
    torch::Tensor t3;
    if (cfg_.ccr_mode == CcrMode::kTemporal) {
        auto to = temporal(stack);
        d4 = inject4(torch::cat({d4, to.deep_s8}, 1));
        t3 = to.deep_s4;
        aux = torch::sigmoid(to.supervision_logits).squeeze(1);
    }
    auto d3 = dec3->forward(torch::cat({up2(d4), e3a, e3b}, 1));  // S/4
    if (t3.defined()) d3 = inject3(torch::cat({d3, t3}, 1));
    auto d2 = dec2->forward(d3, e2a, e2b, f_pvf_1);  // S/2
    auto d1 = dec1->forward(d2, e1a, e1b, f_pvf_2);  // S

    auto cm = torch::sigmoid(head(d1)).squeeze(1);
    return ForwardResult{cm, {cm}, aux};
}

// ---------------------------------------------------------------- factories

std::shared_ptr<ChangeDetectorImpl> build_model(const TrainConfig& cfg) {
    cfg.validate();
    auto mc = cfg.model_config();
    std::shared_ptr<ChangeDetectorImpl> model;
    if (cfg.model == ModelKind::kTriple) {
        model = std::make_shared<TripleBranchNetImpl>(mc);
    } else {
        model = std::make_shared<SiamBaselineImpl>(mc);
    }
    to_channels_last(*model);
    return model;
}

std::string parameter_group(const std::string& name) {
    auto starts = [&name](const char* p) { return name.rfind(p, 0) == 0; };
    if (starts("cnn.")) return "cnn";
    if (starts("pvt.")) return "transformer";
    if (starts("scr.")) return "scr";
    if (starts("ccr.") || starts("temporal")) return "ccr";
    if (starts("heads.")) return "heads";
    if (starts("isci_") || starts("isff_") || starts("fuse") || starts("decode_")) {
        return "fusion";
    }
    return "baseline";
}

std::int64_t parameter_count(const torch::nn::Module& m) {
    std::int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace cd
