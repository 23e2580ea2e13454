#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "tcorres/config.hpp"
#include "tcorres/dataset.hpp"
#include "tcorres/gradsuite.hpp"
#include "tcorres/model.hpp"
#include "tcorres/trainer.hpp"

namespace {

using namespace tcorres;

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

CloudFormat format_for(const std::string& path, const std::string& flag) {
    if (flag == "ply") return CloudFormat::ply_binary_le;
    if (flag == "xyz") return CloudFormat::xyz_ascii;
    if (!flag.empty()) throw std::invalid_argument("unknown cloud format: " + flag);
    return ends_with(path, ".xyz") ? CloudFormat::xyz_ascii : CloudFormat::ply_binary_le;
}

std::string join_path(const std::string& dir, const std::string& rel) {
    if (!rel.empty() && rel.front() == '/') return rel;
    return dir + "/" + rel;
}

std::vector<SamplePair<double>> load_dataset(const std::string& dir) {
    auto entries = load_manifest(dir + "/manifest.txt");
    if (entries.empty()) throw std::runtime_error("dataset manifest is empty: " + dir);
    std::vector<SamplePair<double>> data;
    data.reserve(entries.size());
    for (const auto& e : entries) {
        SamplePair<double> pair;
        pair.partial = read_cloud<double>(join_path(dir, e.partial_path),
                                          format_for(e.partial_path, ""));
        pair.complete = read_cloud<double>(join_path(dir, e.complete_path),
                                           format_for(e.complete_path, ""));
        pair.category = e.category;
        pair.id = e.id;
        data.push_back(std::move(pair));
    }
    return data;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(csv);
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

TCorresNet<double> model_from_checkpoint(const std::string& ckpt) {
    auto cfg = checkpoint_config(ckpt);
    TCorresNet<double> model(cfg, 0);
    load_checkpoint(ckpt, cfg, model.params());
    return model;
}

// Resample a cropped cloud to a fixed count the same way the generator
// does: farthest-point when shrinking, cyclic repetition when growing.
PointCloud<double> resample_to(const PointCloud<double>& pc, int64_t n) {
    if (pc.count() >= n) return gather_points(pc, farthest_point_sample(pc, n, 0));
    PointCloud<double> out;
    out.pts.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out.pts.push_back(pc[i % pc.count()]);
    return out;
}

int cmd_gen_data(const std::string& out_dir, const std::string& shapes_csv, int64_t count,
                 int64_t n_partial, int64_t n_complete, uint64_t seed) {
    auto shape_names = split_list(shapes_csv);
    if (shape_names.empty()) throw std::invalid_argument("gen-data: --shapes list is empty");
    std::vector<PrimitiveKind> kinds;
    for (const auto& name : shape_names) kinds.push_back(primitive_from_name(name));
    if (count < 1) throw std::invalid_argument("gen-data: --count must be >= 1");

    std::filesystem::create_directories(out_dir);
    std::string manifest;
    int64_t written = 0;
    for (size_t s = 0; s < kinds.size(); ++s) {
        const uint64_t shape_seed = derive_seed(seed, shape_names[s]);
        for (int64_t i = 0; i < count; ++i) {
            auto pair = gen_synthetic_pair<double>(kinds[s], PrimitiveParams{}, n_partial,
                                                   n_complete,
                                                   derive_seed(shape_seed, std::to_string(i)));
            const std::string id = shape_names[s] + "-" + std::to_string(i);
            const std::string partial_name = id + "-partial.ply";
            const std::string complete_name = id + "-complete.ply";
            write_cloud(pair.partial, out_dir + "/" + partial_name, CloudFormat::ply_binary_le);
            write_cloud(pair.complete, out_dir + "/" + complete_name, CloudFormat::ply_binary_le);
            manifest += id + " " + shape_names[s] + " " + partial_name + " " + complete_name + "\n";
            ++written;
        }
    }
    detail::write_file(out_dir + "/manifest.txt", manifest);
    std::cout << "wrote " << written << " pairs to " << out_dir << "\n";
    return 0;
}

int cmd_train(RunConfig cfg) {
    if (cfg.data_dir.empty()) throw ConfigError("train: data_dir is required (--data)");
    if (cfg.out_dir.empty()) throw ConfigError("train: out_dir is required (--out)");
    cfg.validate();

    auto data = load_dataset(cfg.data_dir);
    std::filesystem::create_directories(cfg.out_dir);
    detail::write_file(cfg.out_dir + "/config.txt", dump_config(cfg));

    TCorresNet<double> model(cfg.model, derive_seed(cfg.train.seed, "init"));
    std::ofstream log(cfg.out_dir + "/train.log", std::ios::binary | std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open " + cfg.out_dir + "/train.log for writing");

    auto result = fit(model, data, cfg.train, cfg.out_dir, &log, cfg.resume);
    std::cout << "trained " << result.steps_run << " steps, final loss "
              << std::setprecision(6) << result.final_loss << ", artifacts in " << cfg.out_dir
              << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& mode,
             uint64_t seed) {
    auto model = model_from_checkpoint(ckpt);
    auto data = load_dataset(data_dir);

    if (!mode.empty()) {
        double keep = 0;
        if (mode == "easy") keep = 0.75;
        else if (mode == "median") keep = 0.5;
        else if (mode == "hard") keep = 0.25;
        else throw std::invalid_argument("eval: --mode must be easy, median, or hard");
        const uint64_t crop_base = derive_seed(seed, "mode-crop");
        for (auto& pair : data) {
            Rng rng(derive_seed(crop_base, pair.id));
            auto dir = tcorres::detail::sphere_point<double>(1.0, rng);
            auto cropped = halfspace_crop(pair.complete, dir, keep);
            pair.partial = resample_to(cropped, pair.partial.count());
        }
    }

    auto rep = evaluate(model, data, seed);
    std::ostringstream table;
    table << std::fixed;
    table << std::left << std::setw(12) << "category" << std::right << std::setw(14)
          << "cd_l1(x1000)" << std::setw(12) << "fscore@1%" << "\n";
    for (const auto& [name, c] : rep.per_category)
        table << std::left << std::setw(12) << name << std::right << std::setprecision(3)
              << std::setw(14) << c.cd * 1000.0 << std::setprecision(4) << std::setw(12)
              << c.fscore << "\n";
    table << std::left << std::setw(12) << "Avg" << std::right << std::setprecision(3)
          << std::setw(14) << rep.cd_l1 * 1000.0 << std::setprecision(4) << std::setw(12)
          << rep.fscore << "\n";
    table << "cd_l2(x1000) Avg: " << std::setprecision(3) << rep.cd_l2 * 1000.0 << "\n";
    std::cout << table.str();
    return 0;
}

int cmd_complete(const std::string& ckpt, const std::string& in_path, const std::string& out_path,
                 const std::string& format_flag, uint64_t seed) {
    auto model = model_from_checkpoint(ckpt);
    auto cloud = read_cloud<double>(in_path, format_for(in_path, ""));
    auto transform = normalize_cloud(cloud);
    auto result = model.forward(cloud, derive_seed(seed, "complete-sphere"),
                                derive_seed(seed, "complete-value"));
    auto dense = result.dense.to_cloud();
    denormalize_cloud(dense, transform);
    write_cloud(dense, out_path, format_for(out_path, format_flag));
    std::cout << "wrote " << dense.count() << " points to " << out_path << "\n";
    return 0;
}

int cmd_grad_check(const std::string& module, uint64_t seed) {
    auto results = run_grad_suite(module, seed);
    int64_t failures = 0;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.module << "/" << r.name << " max_rel_err "
                  << std::scientific << std::setprecision(3) << r.max_rel_err << " ("
                  << r.coords_checked << " coords)\n";
        if (!r.pass) ++failures;
    }
    std::cout << (failures == 0 ? "all " : "") << results.size() - failures << "/"
              << results.size() << " gradient checks passed\n";
    if (failures > 0) {
        std::cerr << nlohmann::json{{"error", std::to_string(failures) +
                                                  " gradient checks exceeded tolerance"}}
                         .dump()
                  << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"template-guided point cloud completion"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset with a manifest");
    std::string gen_out, gen_shapes = "sphere,box,cylinder,cone,torus";
    int64_t gen_count = 8, gen_partial = 512, gen_complete = 2048;
    uint64_t gen_seed = 1;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--shapes", gen_shapes, "comma-separated primitive names");
    gen->add_option("--count", gen_count, "pairs per shape");
    gen->add_option("--n-partial", gen_partial, "points per partial cloud");
    gen->add_option("--n-complete", gen_complete, "points per complete cloud");
    gen->add_option("--seed", gen_seed, "generation seed");

    auto* train = app.add_subcommand("train", "train a model on a dataset directory");
    std::string train_config, train_data, train_out, train_resume;
    std::vector<std::string> train_sets;
    uint64_t train_seed = 0;
    bool print_config = false;
    train->add_option("--config", train_config, "key = value configuration file");
    train->add_option("--data", train_data, "dataset directory");
    train->add_option("--out", train_out, "output directory for checkpoints and logs");
    train->add_option("--resume", train_resume, "checkpoint to resume from");
    train->add_option("--set", train_sets, "override one config key, e.g. train.total_steps=50");
    auto* train_seed_opt = train->add_option("--seed", train_seed, "run seed");
    train->add_flag("--print-config", print_config, "dump the effective config and exit");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_mode;
    uint64_t eval_seed = 1;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--mode", eval_mode, "re-crop inputs: easy, median, or hard");
    eval->add_option("--seed", eval_seed, "evaluation seed");

    auto* complete = app.add_subcommand("complete", "complete a single cloud file");
    std::string c_ckpt, c_in, c_out, c_format;
    uint64_t c_seed = 1;
    complete->add_option("--ckpt", c_ckpt, "checkpoint file")->required();
    complete->add_option("--in", c_in, "input cloud (.ply or .xyz)")->required();
    complete->add_option("--out", c_out, "output cloud path")->required();
    complete->add_option("--format", c_format, "output format: ply or xyz");
    complete->add_option("--seed", c_seed, "completion seed");

    auto* grad = app.add_subcommand("grad-check", "finite-difference gradient suite");
    std::string grad_module = "all";
    uint64_t grad_seed = 1;
    grad->add_option("--module", grad_module, "ops, blocks, loss, or all");
    grad->add_option("--seed", grad_seed, "check seed");

    try {
        app.parse(argc, argv);

        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_shapes, gen_count, gen_partial, gen_complete,
                                gen_seed);
        if (train->parsed()) {
            RunConfig cfg;
            if (!train_config.empty()) cfg = load_config(train_config);
            for (const auto& assignment : train_sets) apply_config_override(cfg, assignment);
            if (!train_data.empty()) cfg.data_dir = train_data;
            if (!train_out.empty()) cfg.out_dir = train_out;
            if (!train_resume.empty()) cfg.resume = train_resume;
            if (train_seed_opt->count() > 0) cfg.train.seed = train_seed;
            if (print_config) {
                std::cout << dump_config(cfg);
                return 0;
            }
            return cmd_train(std::move(cfg));
        }
        if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_mode, eval_seed);
        if (complete->parsed()) return cmd_complete(c_ckpt, c_in, c_out, c_format, c_seed);
        if (grad->parsed()) return cmd_grad_check(grad_module, grad_seed);
        return 0;
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", std::string(e.what())}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", std::string(e.what())}}.dump() << "\n";
        return 1;
    }
}
