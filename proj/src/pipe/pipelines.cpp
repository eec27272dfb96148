#include "pipe/pipelines.hpp"

#include <cmath>
#include <fstream>

#include "core/hash.hpp"
#include "core/rng.hpp"
#include "data/augment.hpp"
#include "eval/figures.hpp"
#include "gen/diversity.hpp"
#include "gen/generators.hpp"

namespace mapkit::pipe {

namespace fs = std::filesystem;

std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, uint64_t epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(Rng::derive(seed, rng_purpose::kShuffle, epoch));
    rng.shuffle(order);
    return order;
}

namespace {

/// Deterministic batch indices: pure function of (step), so resume never
/// depends on live RNG state.
struct BatchCursor {
    int64_t n = 0, bs = 0;
    uint64_t seed = 0;

    std::vector<int64_t> at(int64_t step) const {
        if (n <= 0) throw std::logic_error("batch cursor over empty dataset");
        int64_t eff_bs = std::min(bs, n);
        int64_t per_epoch = std::max<int64_t>(n / eff_bs, 1);
        uint64_t epoch = static_cast<uint64_t>(step / per_epoch);
        int64_t slot = step % per_epoch;
        auto order = epoch_order(n, seed, epoch);
        return {order.begin() + slot * eff_bs, order.begin() + slot * eff_bs + eff_bs};
    }
};

eval::AccCount accuracy_counts(const std::function<Tensor(const Tensor&)>& logits_fn,
                               const data::DomainDataset& d, int64_t bs) {
    if (!d.has_labels())
        throw std::invalid_argument("evaluate: domain '" + d.domain_id() + "' (" + d.split() +
                                    ") has no labels");
    eval::AccCount acc;
    for (int64_t start = 0; start < d.size(); start += bs) {
        int64_t count = std::min(bs, d.size() - start);
        std::vector<int64_t> idx(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = start + i;
        Tensor logits = logits_fn(d.sample_batch(idx));
        std::vector<int64_t> labels = d.label_batch(idx);
        auto pred = losses::argmax_rows(logits);
        for (int64_t i = 0; i < count; ++i)
            if (pred[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)]) ++acc.correct;
        acc.total += count;
    }
    return acc;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
    f << "\n";
    f.precision(17);
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
        f << "\n";
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

nn::Checkpoint load_source_checkpoint(const ExperimentConfig& cfg) {
    if (cfg.source_checkpoint.empty() || !fs::exists(cfg.source_checkpoint))
        throw std::runtime_error("source checkpoint '" + cfg.source_checkpoint +
                                 "' not found; run the pretrain command first");
    return nn::Checkpoint::load(cfg.source_checkpoint);
}

losses::ProbBatch forward_probs(const nn::MaskedNetwork& net, const Tensor& x, double eps) {
    return losses::probs_from_logits(net.forward(ag::constant(x)), eps);
}

struct RunContext {
    fs::path run_dir;
    std::vector<std::vector<double>> loss_rows;
    std::vector<std::string> trace;
};

/// Emits the standard run directory: config copy, metrics, mask checkpoint,
/// loss trace (csv + figure) and the accuracy figure.
void emit_artifacts(const ExperimentConfig& cfg, const eval::MetricsReport& report,
                    const nn::MaskedNetwork* masked, const RunContext& ctx,
                    const std::vector<std::string>& loss_header,
                    const std::function<void(Archive&)>& save_state) {
    fs::create_directories(ctx.run_dir);
    write_text(ctx.run_dir / "config.json", cfg.to_json().dump(2) + "\n");
    write_text(ctx.run_dir / "metrics.json", report.to_json().dump(2) + "\n");
    write_csv(ctx.run_dir / "losses.csv", loss_header, ctx.loss_rows);
    if (masked) {
        nlohmann::json meta;
        meta["mode"] = cfg.mode;
        meta["seed"] = cfg.seed;
        meta["source_domain"] = cfg.source;
        masked->mask_checkpoint(meta).save(ctx.run_dir / "mask.ckpt");
    }
    if (save_state) {
        Archive a;
        a.meta["mode"] = cfg.mode;
        save_state(a);
        a.save(ctx.run_dir / "state.ckpt");
    }
    eval::render_figures(report, ctx.run_dir / "figures");
    if (!ctx.loss_rows.empty()) {
        std::vector<double> mask_losses;
        for (const auto& row : ctx.loss_rows) mask_losses.push_back(row.back());
        eval::render_loss_trace(mask_losses, ctx.run_dir / "figures" / "loss_trace.png");
    }
}

}  // namespace

data::DomainDataset adapt_channels(const data::DomainDataset& d, const nn::NetworkSpec& spec) {
    int64_t want = spec.input_shape[0];
    if (d.channels() == want) return d;
    if (d.channels() == 1) return d.with_channels(want);
    throw std::invalid_argument("domain '" + d.domain_id() + "' has " +
                                std::to_string(d.channels()) + " channels but the network takes " +
                                std::to_string(want));
}

DataBundle load_bundle(const ExperimentConfig& cfg) {
    DataBundle b;
    b.src_train = adapt_channels(
        data::load_domain(cfg.source, "train", cfg.data.limit_train, cfg.data.cache_dir),
        cfg.network);
    b.src_test = adapt_channels(
        data::load_domain(cfg.source, "test", cfg.data.limit_test, cfg.data.cache_dir),
        cfg.network);
    if (cfg.mode == "sa" || cfg.mode == "sf") {
        b.tgt_train = adapt_channels(
            data::load_domain(cfg.target, "train", cfg.data.limit_train, cfg.data.cache_dir),
            cfg.network);
        b.tgt_test = adapt_channels(
            data::load_domain(cfg.target, "test", cfg.data.limit_test, cfg.data.cache_dir),
            cfg.network);
    } else if (cfg.mode == "df") {
        b.tgt_test = adapt_channels(data::load_domain(cfg.effective_target(), "test",
                                                      cfg.data.limit_test, cfg.data.cache_dir),
                                    cfg.network);
    } else if (cfg.mode == "ownership") {
        b.tgt_test = data::apply_watermark(b.src_test, cfg.watermark);
    }
    return b;
}

eval::AccuracyMap evaluate_model(const nn::MaskedNetwork& m,
                                 const std::vector<data::DomainDataset>& domains,
                                 int64_t batch_size) {
    eval::AccuracyMap out;
    for (const auto& d : domains)
        out[d.domain_id()] =
            accuracy_counts([&](const Tensor& x) { return m.logits(x); }, d, batch_size);
    return out;
}

eval::AccuracyMap evaluate_network(const nn::Network& net,
                                   const std::vector<data::DomainDataset>& domains,
                                   int64_t batch_size) {
    eval::AccuracyMap out;
    for (const auto& d : domains)
        out[d.domain_id()] =
            accuracy_counts([&](const Tensor& x) { return net.logits(x); }, d, batch_size);
    return out;
}

// ------------------------------------------------------------------ pretrain

nn::Checkpoint pretrain_source(const ExperimentConfig& cfg, const DataBundle* pre) {
    DataBundle local;
    if (!pre) {
        local.src_train = adapt_channels(
            data::load_domain(cfg.source, "train", cfg.data.limit_train, cfg.data.cache_dir),
            cfg.network);
        local.src_test = adapt_channels(
            data::load_domain(cfg.source, "test", cfg.data.limit_test, cfg.data.cache_dir),
            cfg.network);
        pre = &local;
    }
    const auto& train = pre->src_train;
    const auto& test = pre->src_test;

    nn::Network net = nn::build_network(cfg.network, cfg.seed);
    nn::Adam opt(net.parameters(), cfg.optim.lr);
    int64_t eff_bs = std::min(cfg.optim.batch_size, train.size());
    int64_t per_epoch = std::max<int64_t>(train.size() / eff_bs, 1);
    BatchCursor cursor{train.size(), cfg.optim.batch_size, Rng::mix(cfg.seed, 0x50)};

    for (int64_t step = 0; step < cfg.optim.pretrain_epochs * per_epoch; ++step) {
        auto idx = cursor.at(step);
        Tensor x = train.sample_batch(idx);
        std::vector<int64_t> y = train.label_batch(idx);
        losses::ProbBatch p = losses::probs_from_logits(net.forward(ag::constant(x)),
                                                        cfg.hparams.epsilon);
        ag::Var picked = ag::gather_rowwise(p.p, y);
        ag::Var loss = ag::neg(ag::mean_all(ag::log_op(picked)));
        if (!std::isfinite(loss->value[0]))
            throw std::runtime_error("pretraining diverged (non-finite loss) at step " +
                                     std::to_string(step));
        opt.zero_grad();
        ag::backward(loss);
        opt.step();
    }

    eval::AccCount acc = accuracy_counts([&](const Tensor& x) { return net.logits(x); }, test, 256);
    nlohmann::json meta;
    meta["seed"] = cfg.seed;
    meta["source_domain"] = cfg.source;
    meta["accuracy"] = acc.pct() / 100.0;
    if (acc.pct() / 100.0 < cfg.accuracy_floor)
        meta["accuracy_warning"] = "test accuracy " + std::to_string(acc.pct()) +
                                   "% is below the configured floor";
    nn::Checkpoint ckpt = net.checkpoint(meta);

    fs::create_directories(cfg.out_dir);
    ckpt.save(fs::path(cfg.out_dir) / "model.ckpt");
    write_text(fs::path(cfg.out_dir) / "config.json", cfg.to_json().dump(2) + "\n");
    write_text(fs::path(cfg.out_dir) / "pretrain.json", meta.dump(2) + "\n");
    return ckpt;
}

// ---------------------------------------------------------------- MaskTrainer

MaskTrainer::MaskTrainer(nn::MaskedNetwork& net, double lr)
    : net_(net), opt_(std::vector<ag::Var>(net.scores().begin(), net.scores().end()), lr) {}

double MaskTrainer::step(const std::function<ag::Var()>& loss_fn) {
    opt_.zero_grad();
    ag::Var loss = loss_fn();
    double val = loss->value[0];
    ag::backward(loss);
    opt_.step();
    history_.push_back(val);
    ++steps_done_;
    return val;
}

bool MaskTrainer::should_early_stop(int64_t window, double tol) const {
    if (static_cast<int64_t>(history_.size()) < 2 * window) return false;
    double recent = 0.0, previous = 0.0;
    size_t n = history_.size();
    for (int64_t i = 0; i < window; ++i) {
        recent += history_[n - 1 - static_cast<size_t>(i)];
        previous += history_[n - 1 - static_cast<size_t>(window + i)];
    }
    return std::fabs(recent - previous) / static_cast<double>(window) < tol;
}

void MaskTrainer::save(Archive& a) const {
    opt_.save_state(a, "mask_opt");
    a.tensors["mask_loss_history"] =
        Tensor({static_cast<int64_t>(history_.size())}, std::vector<double>(history_));
    a.meta["steps_done"] = steps_done_;
}

void MaskTrainer::load(const Archive& a) {
    opt_.load_state(a, "mask_opt");
    const Tensor& h = a.require("mask_loss_history");
    history_.assign(h.data(), h.data() + h.numel());
    steps_done_ = a.meta.at("steps_done").get<int64_t>();
}

// ------------------------------------------------------------------- helpers

namespace {

/// Shared tail of every protect pipeline: evaluation, report, artifacts.
RunResult finish_run(const ExperimentConfig& cfg, const nn::Network& base,
                     nn::MaskedNetwork& masked, const std::vector<data::DomainDataset>& eval_doms,
                     const std::string& target_id, RunContext& ctx,
                     const std::vector<std::string>& loss_header,
                     const std::function<void(Archive&)>& save_state, uint64_t base_hash_before) {
    if (masked.base_hash() != base_hash_before)
        throw std::logic_error("frozen-base violation: base parameters changed during training");

    eval::AccuracyMap before = evaluate_network(base, eval_doms);
    eval::AccuracyMap after = evaluate_model(masked, eval_doms);

    nlohmann::json meta;
    meta["sparsity"] = masked.sparsity();
    meta["steps_run"] = ctx.loss_rows.size();
    meta["base_params_hash"] = hash_hex(base_hash_before);
    eval::MetricsReport report =
        eval::build_report(before, after, eval_doms.front().domain_id(), target_id, cfg.mode,
                           cfg.seed, meta);

    emit_artifacts(cfg, report, &masked, ctx, loss_header, save_state);

    RunResult result;
    result.report = report;
    result.run_dir = ctx.run_dir;
    result.update_trace = ctx.trace;
    result.final_sparsity = masked.sparsity();
    return result;
}

[[noreturn]] void abort_non_finite(const ExperimentConfig& cfg, const RunContext& ctx,
                                   const std::function<void(Archive&)>& save_state,
                                   int64_t step, const std::string& what) {
    fs::create_directories(ctx.run_dir);
    if (save_state) {
        Archive a;
        a.meta["aborted_at_step"] = step;
        save_state(a);
        a.save(ctx.run_dir / "state_abort.ckpt");
    }
    throw std::runtime_error(what + " produced a non-finite loss at step " +
                             std::to_string(step) + " (state dumped to " +
                             (ctx.run_dir / "state_abort.ckpt").string() + ")");
}

}  // namespace

// -------------------------------------------------------------------- SA-MAP

RunResult run_sa_map(const ExperimentConfig& cfg, const DataBundle* pre) {
    if (cfg.mode != "sa") throw std::invalid_argument("run_sa_map: config mode is not 'sa'");
    DataBundle local;
    if (!pre) {
        local = load_bundle(cfg);
        pre = &local;
    }

    nn::Checkpoint ckpt = load_source_checkpoint(cfg);
    nn::Network base = nn::network_from_checkpoint(ckpt, cfg.network, /*frozen=*/true);
    nn::MaskedNetwork masked(ckpt, cfg.network);
    uint64_t base_hash = masked.base_hash();

    MaskTrainer trainer(masked, cfg.optim.mask_lr());
    auto save_state = [&](Archive& a) { trainer.save(a); };
    if (!cfg.resume.empty()) trainer.load(Archive::load(cfg.resume));

    RunContext ctx;
    ctx.run_dir = cfg.out_dir;
    BatchCursor src{pre->src_train.size(), cfg.optim.batch_size, Rng::mix(cfg.seed, 0x5a)};
    BatchCursor tgt{pre->tgt_train.size(), cfg.optim.batch_size, Rng::mix(cfg.seed, 0x7a)};
    int64_t k = cfg.network.classes;

    for (int64_t step = trainer.steps_done(); step < cfg.optim.steps; ++step) {
        Tensor x_s = pre->src_train.sample_batch(src.at(step));
        auto y_s = pre->src_train.label_batch(src.at(step));
        Tensor x_t = pre->tgt_train.sample_batch(tgt.at(step));
        auto y_t = pre->tgt_train.label_batch(tgt.at(step));

        double val = trainer.step([&] {
            return losses::sa_loss(forward_probs(masked, x_s, cfg.hparams.epsilon),
                                   losses::smoothed_labels(y_s, k, cfg.hparams.epsilon),
                                   forward_probs(masked, x_t, cfg.hparams.epsilon),
                                   losses::smoothed_labels(y_t, k, cfg.hparams.epsilon),
                                   cfg.hparams);
        });
        if (!std::isfinite(val)) abort_non_finite(cfg, ctx, save_state, step, "SA-MAP");
        ctx.loss_rows.push_back({static_cast<double>(step), val});
        ctx.trace.push_back("mask");
        if (trainer.should_early_stop(cfg.optim.early_stop_window, cfg.optim.early_stop_tol))
            break;
    }

    return finish_run(cfg, base, masked, {pre->src_test, pre->tgt_test},
                      pre->tgt_test.domain_id(), ctx, {"step", "mask_loss"}, save_state,
                      base_hash);
}

// -------------------------------------------------------------------- SF-MAP

RunResult run_sf_map(const ExperimentConfig& cfg, const DataBundle* pre) {
    if (cfg.mode != "sf") throw std::invalid_argument("run_sf_map: config mode is not 'sf'");
    DataBundle local;
    if (!pre) {
        local = load_bundle(cfg);
        pre = &local;
    }

    nn::Checkpoint ckpt = load_source_checkpoint(cfg);
    nn::Network f_s = nn::network_from_checkpoint(ckpt, cfg.network, /*frozen=*/true);
    nn::MaskedNetwork masked(ckpt, cfg.network);
    uint64_t base_hash = masked.base_hash();
    uint64_t f_s_hash = f_s.params_hash();

    gen::FreshGenerator g_f(64, cfg.network.input_shape, Rng::mix(cfg.seed, 0xf0));
    gen::MemoryPair g_m(64, cfg.network.input_shape, Rng::mix(cfg.seed, 0x30));
    data::AugmentationSet augs = data::AugmentationSet::standard();

    MaskTrainer trainer(masked, cfg.optim.mask_lr());
    auto save_state = [&](Archive& a) {
        trainer.save(a);
        g_f.save_state(a, "g_f");
        g_m.save_state(a, "g_m");
    };
    if (!cfg.resume.empty()) {
        Archive a = Archive::load(cfg.resume);
        trainer.load(a);
        g_f.load_state(a, "g_f");
        g_m.load_state(a, "g_m");
    }

    RunContext ctx;
    ctx.run_dir = cfg.out_dir;
    BatchCursor tgt{pre->tgt_train.size(), cfg.optim.batch_size, Rng::mix(cfg.seed, 0x7a)};
    const int64_t bs = cfg.optim.batch_size;
    const int64_t half = bs / 2;

    for (int64_t step = trainer.steps_done(); step < cfg.optim.steps; ++step) {
        // line 3: sample both generators before anything updates
        Tensor z_f = g_f.make_noise(half, Rng::derive(cfg.seed, 0xf1, static_cast<uint64_t>(step)));
        Tensor z_m = g_m.make_noise(half, Rng::derive(cfg.seed, 0x31, static_cast<uint64_t>(step)));
        Tensor x_f, x_m;
        {
            ag::NoGradGuard ng;
            x_f = g_f.forward(ag::constant(z_f))->value;
            x_m = g_m.generate(ag::constant(z_m))->value;
        }

        // line 4: fresh generator update on x_f
        double fresh_val = gen::train_fresh_step(g_f, f_s, masked, cfg.hparams, z_f, cfg.optim.lr);
        ctx.trace.push_back("fresh");

        // line 5: concatenate the synthetic batch
        Tensor x_syn;
        {
            ag::NoGradGuard ng;
            x_syn = ag::concat_rows({ag::constant(x_f), ag::constant(x_m)})->value;
        }

        // line 6: memory generator / encoder update on x_syn
        double mem_val =
            gen::train_memory_step(g_m, f_s, x_f, z_m, cfg.feature_layers, cfg.optim.lr);
        ctx.trace.push_back("memory");

        // line 7: mask update from x_syn and unlabeled target data
        Tensor x_t = pre->tgt_train.sample_batch(tgt.at(step));
        losses::ProbBatch y_psd = losses::pseudo_label(
            f_s, x_t, augs, cfg.hparams, Rng::derive(cfg.seed, 0x9d, static_cast<uint64_t>(step)));
        losses::ProbBatch p_s2 = losses::probs_from_logits(ag::constant(f_s.logits(x_syn)),
                                                           cfg.hparams.epsilon);
        double val = trainer.step([&] {
            return losses::sf_loss(forward_probs(masked, x_syn, cfg.hparams.epsilon), p_s2,
                                   forward_probs(masked, x_t, cfg.hparams.epsilon), y_psd,
                                   cfg.hparams);
        });
        ctx.trace.push_back("mask");
        if (!std::isfinite(val) || !std::isfinite(fresh_val) || !std::isfinite(mem_val))
            abort_non_finite(cfg, ctx, save_state, step, "SF-MAP");
        ctx.loss_rows.push_back({static_cast<double>(step), fresh_val, mem_val, val});
        if (trainer.should_early_stop(cfg.optim.early_stop_window, cfg.optim.early_stop_tol))
            break;
    }

    if (f_s.params_hash() != f_s_hash)
        throw std::logic_error("frozen-base violation: f_s changed during SF-MAP");
    return finish_run(cfg, f_s, masked, {pre->src_test, pre->tgt_test},
                      pre->tgt_test.domain_id(), ctx,
                      {"step", "fresh_loss", "memory_loss", "mask_loss"}, save_state, base_hash);
}

// -------------------------------------------------------------------- DF-MAP

RunResult run_df_map(const ExperimentConfig& cfg, const DataBundle* pre) {
    if (cfg.mode != "df") throw std::invalid_argument("run_df_map: config mode is not 'df'");

    nn::Checkpoint ckpt = load_source_checkpoint(cfg);
    nn::Network f_s = nn::network_from_checkpoint(ckpt, cfg.network, /*frozen=*/true);
    nn::MaskedNetwork masked(ckpt, cfg.network);
    uint64_t base_hash = masked.base_hash();

    gen::FreshGenerator g_f(64, cfg.network.input_shape, Rng::mix(cfg.seed, 0xf0));
    gen::MemoryPair g_m(64, cfg.network.input_shape, Rng::mix(cfg.seed, 0x30));
    gen::DiversityGenerator g_d(cfg.network.input_shape[0], cfg.hparams.n_dir,
                                Rng::mix(cfg.seed, 0xd0));
    data::AugmentationSet augs = data::AugmentationSet::standard();

    MaskTrainer trainer(masked, cfg.optim.mask_lr());

    // Epoch-cached neighborhood pool; saved with the state so resume never
    // re-runs (and double-advances) the diversity updates.
    Tensor nbh_samples;
    int64_t nbh_epoch = -1;
    constexpr int64_t kItersPerEpoch = 50;
    const int64_t bs = cfg.optim.batch_size;
    const int64_t half = bs / 2;
    const int64_t pool_n = bs * 2;

    auto save_state = [&](Archive& a) {
        trainer.save(a);
        g_f.save_state(a, "g_f");
        g_m.save_state(a, "g_m");
        g_d.save_state(a, "g_d");
        a.tensors["nbh_samples"] = nbh_samples;
        a.meta["nbh_epoch"] = nbh_epoch;
    };
    if (!cfg.resume.empty()) {
        Archive a = Archive::load(cfg.resume);
        trainer.load(a);
        g_f.load_state(a, "g_f");
        g_m.load_state(a, "g_m");
        g_d.load_state(a, "g_d");
        nbh_samples = a.require("nbh_samples");
        nbh_epoch = a.meta.at("nbh_epoch").get<int64_t>();
    }

    RunContext ctx;
    ctx.run_dir = cfg.out_dir;

    {
        data::DataBlackoutGuard no_data;  // hard failure on any dataset access

        for (int64_t step = trainer.steps_done(); step < cfg.optim.steps; ++step) {
            int64_t epoch = step / kItersPerEpoch;
            if (epoch != nbh_epoch) {
                // regenerate the neighborhood domains from fresh pseudo-source
                Tensor x_pool = gen::synthesize_pseudo_source(
                    g_f, g_m, pool_n, Rng::derive(cfg.seed, 0xb0, static_cast<uint64_t>(epoch)));
                losses::ProbBatch y_pool = losses::pseudo_label(
                    f_s, x_pool, augs, cfg.hparams,
                    Rng::derive(cfg.seed, 0xb1, static_cast<uint64_t>(epoch)));
                std::vector<int64_t> labels = losses::argmax_rows(y_pool.p->value);
                auto nbh = gen::generate_neighborhood(g_d, f_s, x_pool, labels, cfg.hparams,
                                                      cfg.steps_per_dir, cfg.optim.lr);
                nbh_samples = nbh.samples;
                nbh_epoch = epoch;
                ctx.trace.push_back("neighborhood");
            }

            Tensor z_f =
                g_f.make_noise(half, Rng::derive(cfg.seed, 0xf1, static_cast<uint64_t>(step)));
            Tensor z_m =
                g_m.make_noise(half, Rng::derive(cfg.seed, 0x31, static_cast<uint64_t>(step)));
            Tensor x_f, x_m;
            {
                ag::NoGradGuard ng;
                x_f = g_f.forward(ag::constant(z_f))->value;
                x_m = g_m.generate(ag::constant(z_m))->value;
            }

            double fresh_val =
                gen::train_fresh_step(g_f, f_s, masked, cfg.hparams, z_f, cfg.optim.lr);
            ctx.trace.push_back("fresh");

            Tensor x_syn;
            {
                ag::NoGradGuard ng;
                x_syn = ag::concat_rows({ag::constant(x_f), ag::constant(x_m)})->value;
            }
            double mem_val =
                gen::train_memory_step(g_m, f_s, x_f, z_m, cfg.feature_layers, cfg.optim.lr);
            ctx.trace.push_back("memory");

            // neighborhood batch plays the unauthorized-domain role
            Rng pick(Rng::derive(cfg.seed, 0xbb, static_cast<uint64_t>(step)));
            std::vector<int64_t> idx(static_cast<size_t>(bs));
            int64_t pool_total = nbh_samples.shape()[0];
            for (auto& v : idx) v = pick.randint(0, pool_total);
            Tensor x_nbh;
            {
                ag::NoGradGuard ng;
                x_nbh = ag::gather_rows(ag::constant(nbh_samples), idx)->value;
            }
            losses::ProbBatch y_psd = losses::pseudo_label(
                f_s, x_nbh, augs, cfg.hparams,
                Rng::derive(cfg.seed, 0x9d, static_cast<uint64_t>(step)));
            losses::ProbBatch p_s2 = losses::probs_from_logits(ag::constant(f_s.logits(x_syn)),
                                                               cfg.hparams.epsilon);
            double val = trainer.step([&] {
                return losses::sf_loss(forward_probs(masked, x_syn, cfg.hparams.epsilon), p_s2,
                                       forward_probs(masked, x_nbh, cfg.hparams.epsilon), y_psd,
                                       cfg.hparams);
            });
            ctx.trace.push_back("mask");
            if (!std::isfinite(val) || !std::isfinite(fresh_val) || !std::isfinite(mem_val))
                abort_non_finite(cfg, ctx, save_state, step, "DF-MAP");
            ctx.loss_rows.push_back({static_cast<double>(step), fresh_val, mem_val, val});
            if (trainer.should_early_stop(cfg.optim.early_stop_window, cfg.optim.early_stop_tol))
                break;
        }
    }

    // post-hoc evaluation on real held-out data (training never saw it)
    DataBundle local;
    if (!pre) {
        local = load_bundle(cfg);
        pre = &local;
    }
    return finish_run(cfg, f_s, masked, {pre->src_test, pre->tgt_test},
                      pre->tgt_test.domain_id(), ctx,
                      {"step", "fresh_loss", "memory_loss", "mask_loss"}, save_state, base_hash);
}

// ----------------------------------------------------------------- ownership

RunResult run_ownership(const ExperimentConfig& cfg, const DataBundle* pre) {
    if (cfg.mode != "ownership")
        throw std::invalid_argument("run_ownership: config mode is not 'ownership'");
    DataBundle local;
    if (!pre) {
        local = load_bundle(cfg);
        pre = &local;
    }

    nn::Checkpoint ckpt = load_source_checkpoint(cfg);
    nn::Network base = nn::network_from_checkpoint(ckpt, cfg.network, /*frozen=*/true);
    nn::MaskedNetwork masked(ckpt, cfg.network);
    uint64_t base_hash = masked.base_hash();

    MaskTrainer trainer(masked, cfg.optim.mask_lr());
    auto save_state = [&](Archive& a) { trainer.save(a); };
    if (!cfg.resume.empty()) trainer.load(Archive::load(cfg.resume));

    RunContext ctx;
    ctx.run_dir = cfg.out_dir;
    BatchCursor src{pre->src_train.size(), cfg.optim.batch_size, Rng::mix(cfg.seed, 0x5a)};
    int64_t k = cfg.network.classes;

    for (int64_t step = trainer.steps_done(); step < cfg.optim.steps; ++step) {
        auto idx = src.at(step);
        Tensor x_s = pre->src_train.sample_batch(idx);
        auto y_s = pre->src_train.label_batch(idx);
        // the watermarked twin is built on the fly; labels carry over
        Tensor x_a = data::watermark_batch(x_s, cfg.watermark);

        double val = trainer.step([&] {
            return losses::owner_loss(forward_probs(masked, x_s, cfg.hparams.epsilon),
                                      losses::smoothed_labels(y_s, k, cfg.hparams.epsilon),
                                      forward_probs(masked, x_a, cfg.hparams.epsilon),
                                      losses::smoothed_labels(y_s, k, cfg.hparams.epsilon),
                                      cfg.hparams);
        });
        if (!std::isfinite(val)) abort_non_finite(cfg, ctx, save_state, step, "ownership");
        ctx.loss_rows.push_back({static_cast<double>(step), val});
        ctx.trace.push_back("mask");
        if (trainer.should_early_stop(cfg.optim.early_stop_window, cfg.optim.early_stop_tol))
            break;
    }

    return finish_run(cfg, base, masked, {pre->src_test, pre->tgt_test},
                      pre->tgt_test.domain_id(), ctx, {"step", "mask_loss"}, save_state,
                      base_hash);
}

RunResult run_protect(const ExperimentConfig& cfg, const DataBundle* pre) {
    if (cfg.mode == "sa") return run_sa_map(cfg, pre);
    if (cfg.mode == "sf") return run_sf_map(cfg, pre);
    if (cfg.mode == "df") return run_df_map(cfg, pre);
    throw std::invalid_argument("protect: config mode must be sa, sf or df (ownership has its "
                                "own command)");
}

}  // namespace mapkit::pipe
