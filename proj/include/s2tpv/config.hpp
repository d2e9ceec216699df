// Copyright 2026 The S2TPV Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "s2tpv/encoder.hpp"
#include "s2tpv/eval.hpp"
#include "s2tpv/train.hpp"

namespace s2tpv {

enum class Dtype { f64, f32 };

/// One run configuration: model, data and training knobs. Serialized in the
/// same key/value document format as scene files.
struct RunConfig {
    Dtype dtype = Dtype::f64;
    EncoderConfig enc;
    TrainConfig train;
    std::size_t n_semantic = 8;
    std::size_t n_scale = 2;
    std::uint64_t model_seed = 1;
    EvalMask mask = EvalMask::occupied;
};

inline void save_run_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open config for writing: " + path);
    os.precision(17);
    os << "s2tpvcfg 1\n";
    os << "dtype " << (cfg.dtype == Dtype::f64 ? "f64" : "f32") << "\n";
    os << "grid " << cfg.enc.h << " " << cfg.enc.w << " " << cfg.enc.d << "\n";
    os << "bounds " << cfg.enc.bounds.x0 << " " << cfg.enc.bounds.x1 << " " << cfg.enc.bounds.y0
       << " " << cfg.enc.bounds.y1 << " " << cfg.enc.bounds.z0 << " " << cfg.enc.bounds.z1
       << "\n";
    os << "embed_dim " << cfg.enc.embed_dim << "\n";
    os << "n_layers " << cfg.enc.n_layers << "\n";
    os << "temporal_steps " << cfg.enc.temporal_steps << "\n";
    os << "n_ref " << cfg.enc.n_ref << "\n";
    os << "n_cross " << cfg.enc.n_cross << "\n";
    os << "n_heads " << cfg.enc.n_heads << "\n";
    os << "n_points " << cfg.enc.n_points << "\n";
    os << "ffn_hidden " << cfg.enc.ffn_hidden << "\n";
    os << "variant " << (cfg.enc.variant == Variant::unified ? "unified" : "warp") << "\n";
    os << "n_semantic " << cfg.n_semantic << "\n";
    os << "n_scale " << cfg.n_scale << "\n";
    os << "model_seed " << cfg.model_seed << "\n";
    os << "task " << (cfg.train.task == Task::sop ? "sop" : "lidar_seg") << "\n";
    os << "lr " << cfg.train.lr << "\n";
    os << "steps " << cfg.train.steps << "\n";
    os << "batch_size " << cfg.train.batch_size << "\n";
    os << "train_seed " << cfg.train.seed << "\n";
    os << "m_train " << cfg.train.m_train << "\n";
    os << "warmup_steps " << cfg.train.warmup_steps << "\n";
    os << "t_min " << cfg.train.t_min << "\n";
    os << "cosine_decay " << (cfg.train.cosine_decay ? 1 : 0) << "\n";
    os << "clip_norm " << cfg.train.clip_norm << "\n";
    os << "eval_mask " << (cfg.mask == EvalMask::occupied ? "occupied" : "all") << "\n";
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "s2tpvcfg 1")
        throw IoError("not a version-1 run config: " + path);
    RunConfig cfg;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key, word;
        ls >> key;
        if (key == "dtype") {
            ls >> word;
            if (word == "f64") cfg.dtype = Dtype::f64;
            else if (word == "f32") cfg.dtype = Dtype::f32;
            else throw IoError("unknown dtype: " + word);
        } else if (key == "grid") ls >> cfg.enc.h >> cfg.enc.w >> cfg.enc.d;
        else if (key == "bounds")
            ls >> cfg.enc.bounds.x0 >> cfg.enc.bounds.x1 >> cfg.enc.bounds.y0 >>
                cfg.enc.bounds.y1 >> cfg.enc.bounds.z0 >> cfg.enc.bounds.z1;
        else if (key == "embed_dim") ls >> cfg.enc.embed_dim;
        else if (key == "n_layers") ls >> cfg.enc.n_layers;
        else if (key == "temporal_steps") ls >> cfg.enc.temporal_steps;
        else if (key == "n_ref") ls >> cfg.enc.n_ref;
        else if (key == "n_cross") ls >> cfg.enc.n_cross;
        else if (key == "n_heads") ls >> cfg.enc.n_heads;
        else if (key == "n_points") ls >> cfg.enc.n_points;
        else if (key == "ffn_hidden") ls >> cfg.enc.ffn_hidden;
        else if (key == "variant") {
            ls >> word;
            if (word == "unified") cfg.enc.variant = Variant::unified;
            else if (word == "warp") cfg.enc.variant = Variant::warp;
            else throw IoError("unknown variant: " + word);
        } else if (key == "n_semantic") ls >> cfg.n_semantic;
        else if (key == "n_scale") ls >> cfg.n_scale;
        else if (key == "model_seed") ls >> cfg.model_seed;
        else if (key == "task") {
            ls >> word;
            if (word == "sop") cfg.train.task = Task::sop;
            else if (word == "lidar_seg") cfg.train.task = Task::lidar_seg;
            else throw IoError("unknown task: " + word);
        } else if (key == "lr") ls >> cfg.train.lr;
        else if (key == "steps") ls >> cfg.train.steps;
        else if (key == "batch_size") ls >> cfg.train.batch_size;
        else if (key == "train_seed") ls >> cfg.train.seed;
        else if (key == "m_train") ls >> cfg.train.m_train;
        else if (key == "warmup_steps") ls >> cfg.train.warmup_steps;
        else if (key == "t_min") ls >> cfg.train.t_min;
        else if (key == "cosine_decay") {
            int v = 0;
            ls >> v;
            cfg.train.cosine_decay = v != 0;
        } else if (key == "clip_norm") ls >> cfg.train.clip_norm;
        else if (key == "eval_mask") {
            ls >> word;
            if (word == "occupied") cfg.mask = EvalMask::occupied;
            else if (word == "all") cfg.mask = EvalMask::all;
            else throw IoError("unknown eval_mask: " + word);
        } else throw IoError("unknown config key: " + key);
        if (!ls) throw IoError("malformed config line: " + line);
    }
    cfg.enc.validate();
    return cfg;
}

}  // namespace s2tpv
