#include "ichseq/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ichseq/csv.hpp"
#include "ichseq/errors.hpp"

namespace ichseq::ingest {

using nlohmann::json;

void RescaleParams::validate() const {
    if (!std::isfinite(slope) || !std::isfinite(intercept)) {
        throw ConfigError("rescale slope/intercept must be finite");
    }
    if (slope == 0.0) throw ConfigError("rescale slope must be non-zero");
}

Tensor to_hounsfield(const RawSlice& raw, const RescaleParams& params) {
    params.validate();
    if (raw.values.size() != raw.rows * raw.cols) {
        throw ContractError("raw slice size does not match its shape");
    }
    Tensor out({raw.rows, raw.cols});
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        out[i] = params.slope * static_cast<double>(raw.values[i]) + params.intercept;
    }
    return out;
}

std::vector<std::size_t> slice_order(const std::vector<SliceRecord>& records) {
    std::vector<std::size_t> idx(records.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const bool all_z = std::all_of(records.begin(), records.end(),
                                   [](const SliceRecord& r) { return r.z_position.has_value(); });
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto& ra = records[a];
        const auto& rb = records[b];
        if (all_z && *ra.z_position != *rb.z_position) return *ra.z_position < *rb.z_position;
        return ra.instance_number < rb.instance_number;
    });
    return idx;
}

namespace {

bool has_extension(const fs::path& p, std::string_view ext) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ext;
}

std::optional<double> json_optional_double(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_number()) throw DataError(std::string("sidecar field '") + key + "' is not a number");
    const double v = j[key].get<double>();
    if (!std::isfinite(v)) return std::nullopt;
    return v;
}

}  // namespace

PortableSidecar read_sidecar(const fs::path& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open sidecar", json_path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed sidecar " + json_path.string() + ": " + e.what());
    }
    PortableSidecar meta;
    try {
        meta.study_id = j.at("study_id").get<std::string>();
        meta.slice_id = j.value("slice_id", json_path.stem().string());
        meta.z_position = json_optional_double(j, "z_position");
        meta.instance_number = j.value("instance_number", std::int64_t{0});
        const auto& shape = j.at("shape");
        if (!shape.is_array() || shape.size() != 2) throw DataError("shape must be [rows, cols]");
        meta.rows = shape[0].get<std::size_t>();
        meta.cols = shape[1].get<std::size_t>();
    } catch (const json::exception& e) {
        throw DataError("invalid sidecar " + json_path.string() + ": " + e.what());
    }
    if (meta.rows == 0 || meta.cols == 0) throw DataError("empty shape in " + json_path.string());
    return meta;
}

void write_portable_slice(const fs::path& dir, const PortableSidecar& meta,
                          const std::vector<std::int16_t>& values) {
    if (values.size() != meta.rows * meta.cols) throw ContractError("slice values do not match shape");
    fs::create_directories(dir);
    const fs::path raw = dir / (meta.slice_id + ".hu16");
    {
        std::ofstream out(raw, std::ios::binary);
        if (!out) throw IoError("cannot write", raw.string());
        for (std::int16_t v : values) {
            const auto u = static_cast<std::uint16_t>(v);
            const char bytes[2] = {static_cast<char>(u & 0xff), static_cast<char>(u >> 8)};
            out.write(bytes, 2);
        }
    }
    json j;
    j["study_id"] = meta.study_id;
    j["slice_id"] = meta.slice_id;
    j["z_position"] = meta.z_position ? json(*meta.z_position) : json(nullptr);
    j["instance_number"] = meta.instance_number;
    j["shape"] = {meta.rows, meta.cols};
    const fs::path side = dir / (meta.slice_id + ".json");
    std::ofstream out(side);
    if (!out) throw IoError("cannot write", side.string());
    out << j.dump(2) << '\n';
}

RawSlice read_portable_slice(const fs::path& hu16_path) {
    fs::path side = hu16_path;
    side.replace_extension(".json");
    const PortableSidecar meta = read_sidecar(side);
    std::ifstream in(hu16_path, std::ios::binary);
    if (!in) throw IoError("cannot open slice", hu16_path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != meta.rows * meta.cols * 2) {
        throw DataError("slice file size " + std::to_string(bytes.size()) + " does not match shape in " +
                        hu16_path.string());
    }
    RawSlice raw{meta.rows, meta.cols, std::vector<std::int32_t>(meta.rows * meta.cols)};
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        const auto lo = static_cast<std::uint8_t>(bytes[2 * i]);
        const auto hi = static_cast<std::uint8_t>(bytes[2 * i + 1]);
        raw.values[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
    }
    return raw;
}

Tensor load_slice_hu(const SliceRecord& record, const RescaleParams& rescale) {
    const fs::path p(record.raw_path);
    if (has_extension(p, ".hu16")) return to_hounsfield(read_portable_slice(p), rescale);
    const DicomSlice d = read_dicom_slice(p, true);
    return to_hounsfield(d.raw, d.rescale);
}

HUVolume assemble_study(const std::vector<SliceRecord>& records, const RescaleParams& rescale) {
    if (records.empty()) throw DataError("study has no slices");
    rescale.validate();
    HUVolume vol;
    vol.study_id = records.front().study_id;
    for (const auto& r : records) {
        if (r.study_id != vol.study_id) {
            throw ContractError("assemble_study: mixed study ids '" + vol.study_id + "' and '" + r.study_id + "'");
        }
    }
    vol.order = slice_order(records);
    vol.z_fallback = std::any_of(records.begin(), records.end(),
                                 [](const SliceRecord& r) { return !r.z_position; });
    for (std::size_t k : vol.order) {
        const auto& r = records[k];
        Tensor hu = load_slice_hu(r, rescale);
        if (!vol.slices.empty() && !hu.same_shape(vol.slices.front())) {
            throw DataError("inconsistent slice shapes in study " + vol.study_id + ": " +
                            vol.slices.front().shape_string() + " vs " + hu.shape_string() + " (" + r.raw_path + ")");
        }
        vol.slices.push_back(std::move(hu));
        vol.slice_ids.push_back(r.slice_id);
        vol.z_positions.push_back(r.z_position.value_or(std::nan("")));
    }
    return vol;
}

// ---------------------------------------------------------------------------
// Labels

const LabelVector* LabelTable::find(const std::string& slice_id) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), slice_id,
                               [](const auto& e, const std::string& k) { return e.first < k; });
    if (it != labels.end() && it->first == slice_id) return &it->second;
    return nullptr;
}

namespace {

std::uint8_t parse_label_cell(const std::string& cell, const std::string& where) {
    if (cell == "0") return 0;
    if (cell == "1") return 1;
    throw DataError("label must be 0 or 1, got '" + cell + "' at " + where);
}

}  // namespace

LabelTable read_label_csv(const fs::path& path) {
    const auto rows = csv::read_file(path.string());
    if (rows.empty()) throw DataError("label file is empty: " + path.string());
    std::map<std::string, std::array<int, kNumClasses>> acc;
    const auto& header = rows.front();
    const bool long_format = header.size() == 2 && header[0] == "ID";
    if (long_format) {
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& r = rows[i];
            const std::string where = path.string() + ":" + std::to_string(i + 1);
            if (r.size() != 2) throw DataError("expected 2 columns at " + where);
            const auto cut = r[0].rfind('_');
            if (cut == std::string::npos) throw DataError("malformed label id '" + r[0] + "' at " + where);
            const auto cls = class_index(std::string_view(r[0]).substr(cut + 1));
            if (!cls) throw DataError("unknown subtype in '" + r[0] + "' at " + where);
            std::string id = r[0].substr(0, cut);
            auto [it, fresh] = acc.try_emplace(id);
            if (fresh) it->second.fill(-1);
            it->second[*cls] = parse_label_cell(r[1], where);
        }
    } else {
        if (header.size() != kNumClasses + 1) {
            throw DataError("label CSV must be `ID,Label` or `slice_id,<6 classes>`: " + path.string());
        }
        std::array<std::size_t, kNumClasses> col{};
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            auto it = std::find(header.begin() + 1, header.end(), std::string(kClassNames[c]));
            if (it == header.end()) throw DataError("label CSV lacks column " + std::string(kClassNames[c]));
            col[c] = static_cast<std::size_t>(it - header.begin());
        }
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& r = rows[i];
            const std::string where = path.string() + ":" + std::to_string(i + 1);
            if (r.size() != header.size()) throw DataError("wrong column count at " + where);
            auto& v = acc[r[0]];
            for (std::size_t c = 0; c < kNumClasses; ++c) v[c] = parse_label_cell(r[col[c]], where);
        }
    }
    LabelTable table;
    for (const auto& [id, v] : acc) {
        if (std::any_of(v.begin(), v.end(), [](int x) { return x < 0; })) {
            table.incomplete.push_back(id);
            continue;
        }
        LabelVector lv{};
        for (std::size_t c = 0; c < kNumClasses; ++c) lv[c] = static_cast<std::uint8_t>(v[c]);
        table.labels.emplace_back(id, lv);
    }
    return table;
}

// ---------------------------------------------------------------------------
// Manifest

void sort_manifest(std::vector<SliceRecord>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const SliceRecord& a, const SliceRecord& b) {
        if (a.study_id != b.study_id) return a.study_id < b.study_id;
        return false;
    });
    // Within a study apply the anatomical order.
    auto first = rows.begin();
    while (first != rows.end()) {
        auto last = std::find_if(first, rows.end(),
                                 [&](const SliceRecord& r) { return r.study_id != first->study_id; });
        std::vector<SliceRecord> study(first, last);
        const auto order = slice_order(study);
        for (std::size_t k = 0; k < order.size(); ++k) *(first + k) = study[order[k]];
        first = last;
    }
}

namespace {

bool looks_like_dicom(const fs::path& p) {
    if (has_extension(p, ".dcm")) return true;
    if (p.has_extension()) return false;
    std::ifstream in(p, std::ios::binary);
    char buf[132];
    if (!in.read(buf, sizeof(buf))) return false;
    return std::string_view(buf + 128, 4) == "DICM";
}

// Tries both the bare slice id and its "ID_"-prefixed form, since challenge
// label files key slices as ID_<slice_id>.
const LabelVector* lookup_label(const LabelTable& table, const std::string& slice_id) {
    if (const auto* v = table.find(slice_id)) return v;
    if (slice_id.rfind("ID_", 0) == 0) return table.find(slice_id.substr(3));
    return table.find("ID_" + slice_id);
}

}  // namespace

ManifestResult build_manifest(const fs::path& root, const ManifestOptions& options) {
    if (!fs::is_directory(root)) throw IoError("dataset root is not a directory", root.string());
    ManifestResult result;

    std::set<std::string> excluded_ids;
    if (options.exclusion_list) {
        std::ifstream in(*options.exclusion_list);
        if (!in) throw IoError("cannot open exclusion list", options.exclusion_list->string());
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            excluded_ids.insert(line);
        }
    }

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::map<std::string, std::size_t> readable_per_study;
    std::map<std::string, std::string> first_path_per_study;
    std::set<std::string> reported_excluded;
    auto note_study = [&](const std::string& study, const std::string& path) {
        readable_per_study.try_emplace(study, 0);
        first_path_per_study.try_emplace(study, path);
    };

    for (const auto& p : files) {
        SliceRecord rec;
        if (has_extension(p, ".hu16")) {
            try {
                fs::path side = p;
                side.replace_extension(".json");
                const auto meta = read_sidecar(side);
                rec.study_id = meta.study_id;
                note_study(rec.study_id, p.string());
                const auto bytes = fs::file_size(p);
                if (bytes != meta.rows * meta.cols * 2) {
                    throw DataError("file size " + std::to_string(bytes) + " does not match shape");
                }
                rec.slice_id = meta.slice_id;
                rec.raw_path = p.string();
                rec.z_position = meta.z_position;
                rec.instance_number = meta.instance_number;
            } catch (const std::exception& e) {
                result.exclusions.push_back({rec.study_id, p.string(), e.what()});
                continue;
            }
        } else if (looks_like_dicom(p)) {
            try {
                rec = read_dicom_slice(p, false).record;
                note_study(rec.study_id, p.string());
            } catch (const std::exception& e) {
                result.exclusions.push_back({"", p.string(), e.what()});
                continue;
            }
        } else {
            continue;
        }
        if (excluded_ids.count(rec.study_id)) {
            if (reported_excluded.insert(rec.study_id).second) {
                result.exclusions.push_back({rec.study_id, p.parent_path().string(), "listed in exclusion list"});
            }
            continue;
        }
        ++readable_per_study[rec.study_id];
        result.rows.push_back(std::move(rec));
    }

    for (const auto& [study, count] : readable_per_study) {
        if (count == 0 && !excluded_ids.count(study)) {
            result.exclusions.push_back({study, first_path_per_study[study], "study has no readable slices"});
        }
    }

    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : result.rows) {
        if (!seen.emplace(r.study_id, r.slice_id).second) {
            throw DataError("duplicate slice_id '" + r.slice_id + "' in study " + r.study_id);
        }
    }

    if (options.labels_csv) {
        const LabelTable table = read_label_csv(*options.labels_csv);
        std::set<std::string> used;
        for (auto& r : result.rows) {
            if (const auto* v = lookup_label(table, r.slice_id)) {
                r.labels = *v;
                used.insert(r.slice_id);
                used.insert("ID_" + r.slice_id);
                if (r.slice_id.rfind("ID_", 0) == 0) used.insert(r.slice_id.substr(3));
            } else {
                result.warnings.push_back("no labels for slice " + r.slice_id);
            }
        }
        for (const auto& [id, _] : table.labels) {
            if (!used.count(id)) {
                result.warnings.push_back("label row references unknown slice " + id);
                result.exclusions.push_back({"", options.labels_csv->string(), "labels for unknown slice " + id});
            }
        }
        for (const auto& id : table.incomplete) {
            result.warnings.push_back("incomplete labels for slice " + id);
        }
    }

    for (const auto& r : result.rows) {
        if (!r.z_position) {
            result.warnings.push_back("slice " + r.slice_id + " has no z position; study " + r.study_id +
                                      " ordered by instance_number");
        }
    }

    sort_manifest(result.rows);
    return result;
}

void write_manifest(std::ostream& out, const std::vector<SliceRecord>& rows) {
    out << kManifestHeader << '\n';
    for (const auto& r : rows) {
        csv::Row f{r.study_id, r.slice_id, r.raw_path,
                   r.z_position ? csv::format_double(*r.z_position) : std::string(),
                   std::to_string(r.instance_number)};
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            f.push_back(r.labels ? std::to_string((*r.labels)[c]) : std::string());
        }
        out << csv::join(f) << '\n';
    }
}

void write_manifest_file(const fs::path& path, const std::vector<SliceRecord>& rows) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest", path.string());
    // Paths under the manifest's directory are stored relative to it.
    const fs::path base = fs::absolute(path).parent_path().lexically_normal();
    std::vector<SliceRecord> stored = rows;
    for (auto& r : stored) {
        const fs::path abs = fs::absolute(r.raw_path).lexically_normal();
        const fs::path rel = abs.lexically_relative(base);
        const bool inside = !rel.empty() && *rel.begin() != "..";
        r.raw_path = inside ? rel.generic_string() : abs.generic_string();
    }
    write_manifest(out, stored);
}

std::vector<SliceRecord> read_manifest(std::istream& in) {
    const auto rows = csv::read_all(in);
    if (rows.empty() || csv::join(rows.front()) != kManifestHeader) {
        throw DataError("manifest header must be: " + std::string(kManifestHeader));
    }
    std::vector<SliceRecord> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& f = rows[i];
        const std::string where = "manifest line " + std::to_string(i + 1);
        if (f.size() != 5 + kNumClasses) throw DataError("wrong column count at " + where);
        SliceRecord r;
        r.study_id = f[0];
        r.slice_id = f[1];
        r.raw_path = f[2];
        if (!f[3].empty()) {
            double z = 0;
            if (!csv::parse_double(f[3], z) || !std::isfinite(z)) throw DataError("bad z_position at " + where);
            r.z_position = z;
        }
        long long inst = 0;
        if (!csv::parse_int(f[4], inst)) throw DataError("bad instance_number at " + where);
        r.instance_number = inst;
        const bool any_label = std::any_of(f.begin() + 5, f.end(), [](const std::string& s) { return !s.empty(); });
        if (any_label) {
            LabelVector v{};
            for (std::size_t c = 0; c < kNumClasses; ++c) v[c] = parse_label_cell(f[5 + c], where);
            r.labels = v;
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<SliceRecord> read_manifest_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest", path.string());
    auto rows = read_manifest(in);
    const fs::path base = fs::absolute(path).parent_path();
    for (auto& r : rows) {
        if (fs::path(r.raw_path).is_relative()) r.raw_path = (base / r.raw_path).lexically_normal().string();
    }
    return rows;
}

std::string exclusion_report_json(const ManifestResult& result) {
    json j;
    j["excluded"] = json::array();
    for (const auto& e : result.exclusions) {
        j["excluded"].push_back({{"study_id", e.study_id}, {"path", e.path}, {"reason", e.reason}});
    }
    j["warnings"] = result.warnings;
    j["n_rows"] = result.rows.size();
    return j.dump(2);
}

std::vector<std::vector<SliceRecord>> group_by_study(const std::vector<SliceRecord>& rows) {
    std::vector<std::vector<SliceRecord>> groups;
    std::map<std::string, std::size_t> index;
    for (const auto& r : rows) {
        auto [it, fresh] = index.try_emplace(r.study_id, groups.size());
        if (fresh) groups.emplace_back();
        groups[it->second].push_back(r);
    }
    return groups;
}

}  // namespace ichseq::ingest
