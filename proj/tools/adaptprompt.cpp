// SPDX-License-Identifier: Apache-2.0

#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "adaptprompt/commands.hpp"

namespace ap = adaptprompt;

int main(int argc, char** argv) {
    using Command = std::function<void(const ap::RunConfig&, std::ostream&)>;
    const std::map<std::string, std::pair<std::string, Command>> commands{
        {"synth", {"generate the synthetic corpus and manifests", ap::cmd_synth}},
        {"init_backbone", {"write randomly initialized backbone weights and the vocabulary", ap::cmd_init_backbone}},
        {"train", {"train adapter / prompts / head on a manifest", ap::cmd_train}},
        {"eval", {"per-generator AP and accuracy report", ap::cmd_eval}},
        {"attribute", {"multi-class source attribution", ap::cmd_attribute}},
        {"spectrum", {"radial power spectra and spike detection", ap::cmd_spectrum}},
        {"robust", {"blur / JPEG-like robustness curves", ap::cmd_robust}},
        {"export", {"dump feature vectors for external projection", ap::cmd_export}},
        {"count", {"trainable and total parameter counts", ap::cmd_count}},
    };

    CLI::App app{"Parameter-efficient adaptation of a frozen dual encoder for synthetic-image detection"};
    app.require_subcommand(1);
    std::string config_path;
    std::map<std::string, std::string> overrides;
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, entry] : commands) {
        CLI::App* sub = app.add_subcommand(name, entry.first);
        sub->add_option("--config", config_path, "key = value settings file");
        for (const auto& [key, def] : ap::default_settings()) {
            sub->add_option_function<std::string>("--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; },
                                                  "default: " + (def.empty() ? std::string("(unset)") : def));
        }
        subs[name] = sub;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        ap::RunConfig cfg;
        if (!config_path.empty()) cfg.merge_file(config_path);
        cfg.merge(overrides, "command line");
        for (const auto& [name, sub] : subs) {
            if (sub->parsed()) commands.at(name).second(cfg, std::cout);
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg)
            if (c == '\n') c = ' ';
        std::cerr << "error: " << msg << '\n';
        return 1;
    }
    return 0;
}
