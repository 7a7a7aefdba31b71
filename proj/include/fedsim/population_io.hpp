#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "fedsim/data.hpp"
#include "fedsim/strings.hpp"

namespace fedsim {

// Save/load a population as one CSV per dataset plus a manifest that carries
// the per-client provenance (noise kind) and ids.

inline void save_dataset_csv(const LocalDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    const std::size_t d = ds.data.features.cols();
    for (std::size_t j = 0; j < d; ++j) out << "f" << j << ",";
    out << "target\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) out << format_double(ds.data.features(i, j)) << ",";
        if (ds.data.is_classification())
            out << ds.data.labels[i];
        else
            out << format_double(ds.data.targets(i, 0));
        out << "\n";
    }
}

inline void save_population(const Population& pop, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["n_clients"] = pop.clients.size();
    nlohmann::json clients = nlohmann::json::array();
    for (const auto& c : pop.clients) {
        const std::string file = "client_" + std::to_string(c.client_id) + ".csv";
        save_dataset_csv(c, dir / file);
        clients.push_back({{"id", c.client_id},
                           {"provenance", to_string(c.provenance)},
                           {"file", file},
                           {"size", c.size()}});
    }
    manifest["clients"] = std::move(clients);
    save_dataset_csv(pop.validation, dir / "validation.csv");
    manifest["validation"] = {{"file", "validation.csv"}, {"size", pop.validation.size()}};
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw Error("cannot write manifest.json");
    out << manifest.dump(2) << "\n";
}

inline Population load_population(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw ConfigError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    in >> manifest;
    Population pop;
    for (const auto& entry : manifest.at("clients")) {
        LocalDataset ds = load_csv((dir / entry.at("file").get<std::string>()).string());
        ds.client_id = entry.at("id").get<std::size_t>();
        ds.provenance = noise_kind_from_string(entry.at("provenance").get<std::string>());
        pop.clients.push_back(std::move(ds));
    }
    pop.validation =
        load_csv((dir / manifest.at("validation").at("file").get<std::string>()).string());
    pop.validation.provenance = NoiseKind::clean;
    pop.validation.client_id = static_cast<std::size_t>(-1);
    return pop;
}

}  // namespace fedsim
