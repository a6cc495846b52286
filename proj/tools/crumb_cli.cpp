// Command-line front end: pretrain / stream / report / ablate.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crumb/config.hpp"
#include "crumb/evaluation.hpp"
#include "crumb/stats.hpp"
#include "crumb/trainer.hpp"

namespace fs = std::filesystem;
using namespace crumb;

namespace {

std::string kebab(const std::string& key) {
    std::string out = key;
    for (char& c : out)
        if (c == '.' || c == '_') c = '-';
    return out;
}

fs::path resolve_out(const std::string& out) {
    fs::path p = out;
    const char* root = std::getenv("CRUMB_OUT_ROOT");
    if (root != nullptr && p.is_relative()) p = fs::path(root) / p;
    return p;
}

struct DatasetBundle {
    std::vector<Sample> train, test;
};

DatasetBundle load_stream_dataset(const RunConfig& cfg) {
    DatasetBundle b;
    if (cfg.dataset == "synthetic") {
        SynthData d = synth_stream_generate(resolved_stream_data_config(cfg));
        b.train = std::move(d.train);
        b.test = std::move(d.test);
    } else {
        if (cfg.manifest_path.empty())
            throw ConfigError("missing required key 'manifest_path' for dataset=manifest");
        if (cfg.manifest_test_path.empty())
            throw ConfigError("missing required key 'manifest_test_path' for dataset=manifest");
        b.train = load_manifest(cfg.manifest_path);
        b.test = load_manifest(cfg.manifest_test_path);
    }
    return b;
}

DatasetBundle load_pretrain_dataset(const RunConfig& cfg) {
    SynthData d = synth_stream_generate(resolved_pretrain_data_config(cfg));
    return {std::move(d.train), std::move(d.test)};
}

std::vector<Sample> filter_classes(const std::vector<Sample>& pool,
                                   const std::set<std::uint32_t>& classes) {
    std::vector<Sample> out;
    for (const Sample& s : pool)
        if (classes.count(s.class_id)) out.push_back(s);
    return out;
}

void write_accuracy_row(std::ostream& os, const std::string& run_id, std::size_t task,
                        const std::string& eval_task, double acc) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", acc);
    os << run_id << "," << task << "," << eval_task << "," << buf << "\n";
}

int run_pretrain(const RunConfig& cfg, const fs::path& out) {
    fs::create_directories(out);
    write_config(cfg, out / "config.txt");
    DatasetBundle data = load_pretrain_dataset(cfg);

    Trainer trainer(resolved_train_config(cfg), cfg.net, 3, cfg.data.image_side);
    std::ofstream metrics(out / "pretrain_metrics.jsonl");
    trainer.set_metric_sink(&metrics);
    trainer.pretrain(data.train);
    trainer.save_checkpoint(out / "checkpoint");

    std::ofstream eval(out / "pretrain_eval.csv");
    eval << "split,accuracy\n";
    auto train_rec = trainer.evaluate(data.train);
    auto test_rec = trainer.evaluate(data.test);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", top1_accuracy(train_rec));
    eval << "train," << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.6f", top1_accuracy(test_rec));
    eval << "test," << buf << "\n";
    return 0;
}

int run_stream(const RunConfig& cfg, const fs::path& out, const fs::path& checkpoint,
               bool resume) {
    fs::create_directories(out);
    write_config(cfg, out / "config.txt");
    std::string run_id = out.filename().string();

    Trainer trainer(resolved_train_config(cfg), cfg.net, 3, cfg.data.image_side);
    if (resume) {
        std::size_t last = 0;
        for (std::size_t t = 1; t < 1000; ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "task_%02zu", t);
            if (fs::exists(out / name / "state.json")) last = t;
        }
        if (last == 0) throw DataError("resume: no task checkpoint found in " + out.string());
        char name[32];
        std::snprintf(name, sizeof(name), "task_%02zu", last);
        trainer.load_checkpoint(out / name);
    } else {
        if (!fs::exists(checkpoint / "state.json"))
            throw DataError("pretrain checkpoint not found: " + checkpoint.string());
        trainer.load_checkpoint(checkpoint);
        trainer.begin_stream();
    }

    DatasetBundle data = load_stream_dataset(cfg);
    TaskSchedule sched =
        build_schedule(data.train, cfg.classes_per_task, parse_protocol(cfg.protocol),
                       cfg.train.first_task_epochs, cfg.seed * 0x9E3779B97F4A7C15ULL + 3);

    std::vector<std::set<std::uint32_t>> task_classes;
    for (const Task& t : sched.tasks)
        task_classes.emplace_back(t.class_ids.begin(), t.class_ids.end());

    auto metrics_mode = resume ? std::ios::app : std::ios::out;
    std::ofstream metrics(out / "stream_metrics.jsonl", metrics_mode);
    trainer.set_metric_sink(&metrics);

    std::ofstream acc_csv;
    if (resume) {
        acc_csv.open(out / "accuracy.csv", std::ios::app);
    } else {
        acc_csv.open(out / "accuracy.csv");
        acc_csv << "run_id,task,eval_task,accuracy\n";
    }

    std::size_t total_tasks = sched.tasks.size();
    if (cfg.stop_after_task > 0) total_tasks = std::min(total_tasks, cfg.stop_after_task);
    double first_task_accuracy = 0.0;

    for (std::size_t t = trainer.current_task(); t < total_tasks; ++t) {
        trainer.stream_task(data.train, sched.tasks[t]);
        std::set<std::uint32_t> seen;
        for (std::size_t j = 0; j <= t; ++j) {
            auto task_test = filter_classes(data.test, task_classes[j]);
            double a = top1_accuracy(trainer.evaluate(task_test));
            write_accuracy_row(acc_csv, run_id, t + 1, std::to_string(j + 1), a);
            if (t == 0 && j == 0) first_task_accuracy = a;
            seen.insert(task_classes[j].begin(), task_classes[j].end());
        }
        auto seen_test = filter_classes(data.test, seen);
        double all_seen = top1_accuracy(trainer.evaluate(seen_test));
        write_accuracy_row(acc_csv, run_id, t + 1, "all", all_seen);

        char name[32];
        std::snprintf(name, sizeof(name), "task_%02zu", t + 1);
        trainer.save_checkpoint(out / name);
    }

    // final predictions over the test set of every seen class, canonical order
    std::set<std::uint32_t> seen;
    for (std::size_t j = 0; j < total_tasks; ++j)
        seen.insert(task_classes[j].begin(), task_classes[j].end());
    auto seen_test = filter_classes(data.test, seen);
    std::sort(seen_test.begin(), seen_test.end(),
              [](const Sample& a, const Sample& b) { return a.sample_id < b.sample_id; });
    auto records = trainer.evaluate(seen_test);
    std::ofstream pred(out / "predictions.csv");
    pred << "sample_id,truth,predicted\n";
    for (const auto& r : records)
        pred << r.sample_id << "," << r.truth << "," << r.predicted << "\n";

    // re-read the first-task accuracy on resume (it was computed pre-interrupt)
    if (resume || first_task_accuracy == 0.0) {
        std::ifstream acc_in(out / "accuracy.csv");
        std::string line;
        while (std::getline(acc_in, line)) {
            std::stringstream ss(line);
            std::string rid, task, ev, a;
            std::getline(ss, rid, ',');
            std::getline(ss, task, ',');
            std::getline(ss, ev, ',');
            std::getline(ss, a, ',');
            if (task == "1" && ev == "1") first_task_accuracy = std::stod(a);
        }
    }

    nlohmann::json summary;
    summary["run_id"] = run_id;
    summary["mode"] = cfg.mode;
    summary["protocol"] = cfg.protocol;
    summary["seed"] = cfg.seed;
    summary["tasks_run"] = total_tasks;
    summary["first_task_accuracy"] = first_task_accuracy;
    summary["final_all_seen_accuracy"] = top1_accuracy(records);
    summary["eval_batch"] = cfg.eval_batch;
    summary["eval_partition_seed"] = cfg.eval_partition_seed;
    summary["buffer_bytes"] = trainer.buffer() ? trainer.buffer()->stored_bytes() : 0;
    std::ofstream sf(out / "summary.json");
    sf << summary.dump(2) << "\n";
    return 0;
}

struct RunData {
    std::string run_id, mode;
    std::uint64_t seed = 0;
    double first_task_accuracy = 0.0;
    std::size_t eval_batch = 100;
    std::uint64_t partition_seed = 0;
    std::vector<std::string> accuracy_rows;
    std::vector<PredictionRecord> predictions;
};

RunData load_run(const fs::path& dir) {
    std::ifstream sf(dir / "summary.json");
    if (!sf) throw DataError("report: missing summary.json in " + dir.string());
    nlohmann::json summary = nlohmann::json::parse(sf);
    RunData run;
    run.run_id = summary.at("run_id").get<std::string>();
    run.mode = summary.at("mode").get<std::string>();
    run.seed = summary.at("seed").get<std::uint64_t>();
    run.first_task_accuracy = summary.at("first_task_accuracy").get<double>();
    run.eval_batch = summary.at("eval_batch").get<std::size_t>();
    run.partition_seed = summary.at("eval_partition_seed").get<std::uint64_t>();

    std::ifstream acc(dir / "accuracy.csv");
    if (!acc) throw DataError("report: missing accuracy.csv in " + dir.string());
    std::string line;
    std::getline(acc, line);  // header
    while (std::getline(acc, line))
        if (!line.empty()) run.accuracy_rows.push_back(line);

    std::ifstream pred(dir / "predictions.csv");
    if (!pred) throw DataError("report: missing predictions.csv in " + dir.string());
    std::getline(pred, line);
    while (std::getline(pred, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string sid, truth, predicted;
        std::getline(ss, sid, ',');
        std::getline(ss, truth, ',');
        std::getline(ss, predicted, ',');
        run.predictions.push_back({std::stoull(sid), static_cast<std::uint32_t>(std::stoul(truth)),
                                   static_cast<std::uint32_t>(std::stoul(predicted))});
    }
    return run;
}

int run_report(const std::vector<std::string>& run_dirs, const fs::path& out, bool filter) {
    if (run_dirs.empty()) throw ConfigError("report: at least one run directory required");
    std::vector<RunData> runs;
    for (const auto& d : run_dirs) runs.push_back(load_run(d));

    for (const RunData& r : runs) {
        if (r.eval_batch != runs[0].eval_batch || r.partition_seed != runs[0].partition_seed)
            throw DataError("report: incompatible batch partitions across runs");
        if (r.predictions.size() != runs[0].predictions.size())
            throw DataError("report: incompatible batch partitions across runs");
        for (std::size_t i = 0; i < r.predictions.size(); ++i)
            if (r.predictions[i].sample_id != runs[0].predictions[i].sample_id)
                throw DataError("report: incompatible batch partitions across runs");
    }

    if (filter) {
        std::vector<double> first;
        for (const RunData& r : runs) first.push_back(r.first_task_accuracy);
        const double thresholds[] = {0.8, 0.6, 0.4};
        auto kept = filter_runs(first, thresholds);
        std::vector<RunData> filtered;
        for (std::size_t i : kept) filtered.push_back(std::move(runs[i]));
        runs = std::move(filtered);
    }

    fs::create_directories(out);
    std::ofstream mat(out / "matrices.csv");
    mat << "run_id,task,eval_task,accuracy\n";
    for (const RunData& r : runs)
        for (const auto& row : r.accuracy_rows) mat << row << "\n";

    std::map<std::string, std::vector<const RunData*>> by_mode;
    for (const RunData& r : runs) by_mode[r.mode].push_back(&r);
    for (auto& [mode, group] : by_mode)
        std::sort(group.begin(), group.end(),
                  [](const RunData* a, const RunData* b) { return a->seed < b->seed; });

    std::ofstream tt(out / "ttests.csv");
    tt << "comparison,t,df,p\n";
    std::vector<std::string> modes;
    for (const auto& [mode, group] : by_mode) modes.push_back(mode);
    for (std::size_t i = 0; i < modes.size(); ++i) {
        for (std::size_t j = i + 1; j < modes.size(); ++j) {
            const auto& ga = by_mode[modes[i]];
            const auto& gb = by_mode[modes[j]];
            if (ga.size() != gb.size())
                throw DataError("report: run count mismatch between modes " + modes[i] + " and " +
                                modes[j]);
            // pool per-batch accuracy pairs across runs, paired by seed order
            std::vector<double> series_a, series_b;
            for (std::size_t k = 0; k < ga.size(); ++k) {
                auto sa = batch_accuracy_series(ga[k]->predictions, runs[0].eval_batch,
                                                runs[0].partition_seed);
                auto sb = batch_accuracy_series(gb[k]->predictions, runs[0].eval_batch,
                                                runs[0].partition_seed);
                series_a.insert(series_a.end(), sa.begin(), sa.end());
                series_b.insert(series_b.end(), sb.begin(), sb.end());
            }
            if (series_a.size() < 2) continue;  // test set smaller than one batch
            TTestResult res = batch_paired_ttest(series_a, series_b);
            char buf[128];
            std::snprintf(buf, sizeof(buf), "%.6f,%.0f,%.6g", res.t, res.df, res.p);
            tt << modes[i] << "_vs_" << modes[j] << "," << buf << "\n";
        }
    }
    return 0;
}

int run_ablate(const RunConfig& base, const fs::path& out,
               const std::vector<std::string>& grid_specs) {
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const auto& spec : grid_specs) {
        auto eq = spec.find('=');
        if (eq == std::string::npos)
            throw ConfigError("ablate: grid spec must be key=v1,v2,...: " + spec);
        std::string key = spec.substr(0, eq);
        std::vector<std::string> values;
        std::stringstream ss(spec.substr(eq + 1));
        std::string v;
        while (std::getline(ss, v, ',')) values.push_back(v);
        if (values.empty()) throw ConfigError("ablate: empty grid for key " + key);
        axes.emplace_back(key, values);
    }
    if (axes.empty()) throw ConfigError("ablate: at least one --grid required");

    fs::create_directories(out);
    std::ofstream index(out / "ablate_index.csv");
    index << "run_dir,config\n";

    std::vector<std::size_t> cursor(axes.size(), 0);
    while (true) {
        RunConfig cfg = base;
        std::string name;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            const auto& [key, values] = axes[a];
            set_config_key(cfg, key, values[cursor[a]]);
            if (!name.empty()) name += "_";
            std::string part = key + "=" + values[cursor[a]];
            for (char& c : part)
                if (c == '.') c = '_';
            name += part;
        }
        fs::path child = out / name;
        run_pretrain(cfg, child / "pretrain");
        run_stream(cfg, child / "stream", child / "pretrain" / "checkpoint", false);
        index << name << "," << name << "/stream/config.txt\n";

        std::size_t a = 0;
        for (; a < axes.size(); ++a) {
            if (++cursor[a] < axes[a].second.size()) break;
            cursor[a] = 0;
        }
        if (a == axes.size()) break;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CRUMB stream-learning engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint_dir;
    bool resume = false, filter = false;
    std::vector<std::string> overrides, grid_specs, run_dirs;
    std::map<std::string, std::string> flag_values;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", config_path, "key=value config file");
        auto* out_opt = sub->add_option("--out", out_dir, "output directory");
        if (needs_out) out_opt->required();
        sub->add_option("--set", overrides, "override: key=value")->take_all();
        for (const auto& key : config_keys())
            sub->add_option("--" + kebab(key), flag_values[key], "config key " + key);
    };

    CLI::App* pre = app.add_subcommand("pretrain", "train F, P and the codebook on held-out classes");
    add_common(pre, true);

    CLI::App* stream = app.add_subcommand("stream", "run the class-incremental stream");
    add_common(stream, true);
    stream->add_option("--checkpoint", checkpoint_dir, "pretrain checkpoint directory");
    stream->add_flag("--resume", resume, "continue from the last task checkpoint in --out");

    CLI::App* report = app.add_subcommand("report", "aggregate run directories");
    report->add_option("runs", run_dirs, "run directories")->required();
    report->add_option("--out", out_dir, "output directory")->required();
    report->add_flag("--filter", filter, "apply first-task accuracy filtering");

    CLI::App* ablate = app.add_subcommand("ablate", "expand a config grid into child runs");
    add_common(ablate, true);
    ablate->add_option("--grid", grid_specs, "grid axis: key=v1,v2,...")->take_all();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config_file(config_path);
        for (const auto& [key, value] : flag_values)
            if (!value.empty()) set_config_key(cfg, key, value);
        for (const auto& ov : overrides) {
            auto eq = ov.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + ov);
            set_config_key(cfg, ov.substr(0, eq), ov.substr(eq + 1));
        }

        if (pre->parsed()) return run_pretrain(cfg, resolve_out(out_dir));
        if (stream->parsed()) {
            if (!resume && checkpoint_dir.empty())
                throw ConfigError("missing required option '--checkpoint'");
            return run_stream(cfg, resolve_out(out_dir), checkpoint_dir, resume);
        }
        if (report->parsed()) {
            bool do_filter = filter || cfg.report_filter;
            return run_report(run_dirs, resolve_out(out_dir), do_filter);
        }
        if (ablate->parsed()) return run_ablate(cfg, resolve_out(out_dir), grid_specs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
