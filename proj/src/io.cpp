#include "logenc/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace logenc {

using nlohmann::json;

std::string bytes_to_json_string(std::string_view bytes) {
    std::string out;
    out.reserve(bytes.size());
    for (unsigned char c : bytes) {
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back(static_cast<char>(0xC0 | (c >> 6)));
            out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
        }
    }
    return out;
}

std::string json_string_to_bytes(std::string_view utf8) {
    std::string out;
    out.reserve(utf8.size());
    for (size_t i = 0; i < utf8.size();) {
        unsigned char c = static_cast<unsigned char>(utf8[i]);
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            i += 1;
        } else if ((c & 0xE0) == 0xC0 && i + 1 < utf8.size()) {
            unsigned char c2 = static_cast<unsigned char>(utf8[i + 1]);
            unsigned int cp = (static_cast<unsigned int>(c & 0x1F) << 6) | (c2 & 0x3F);
            if (cp > 0xFF) {
                throw Error("ParseError", "string is not latin-1 encodable");
            }
            out.push_back(static_cast<char>(cp));
            i += 2;
        } else {
            throw Error("ParseError", "string is not latin-1 encodable");
        }
    }
    return out;
}

json record_to_json(const LogRecord& record) {
    json obj;
    obj["id"] = record.id;
    obj["raw"] = bytes_to_json_string(record.raw);
    if (record.fields.has_value()) {
        json f = json::object();
        for (const auto& [k, v] : *record.fields) f[k] = bytes_to_json_string(v);
        obj["fields"] = f;
    }
    obj["source"] = record.source;
    if (record.split != Split::unlabeled) obj["split"] = split_name(record.split);
    for (const auto& [k, v] : record.meta) obj[k] = v;
    return obj;
}

LogRecord record_from_json(const json& obj) {
    static const char* known[] = {"id", "raw", "fields", "source", "split"};
    LogRecord rec;
    rec.id = obj.at("id").get<std::string>();
    rec.raw = json_string_to_bytes(obj.at("raw").get<std::string>());
    if (obj.contains("fields") && !obj["fields"].is_null()) {
        std::map<std::string, std::string> fields;
        for (auto it = obj["fields"].begin(); it != obj["fields"].end(); ++it) {
            fields[it.key()] = json_string_to_bytes(it.value().get<std::string>());
        }
        rec.fields = std::move(fields);
    }
    rec.source = obj.value("source", std::string{});
    if (obj.contains("split")) rec.split = split_from_name(obj["split"].get<std::string>());
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool is_known = false;
        for (const char* k : known) is_known = is_known || it.key() == k;
        if (is_known) continue;
        if (it.value().is_string()) {
            rec.meta[it.key()] = it.value().get<std::string>();
        } else {
            rec.meta[it.key()] = it.value().dump();
        }
    }
    return rec;
}

std::vector<LogRecord> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("ConfigInvalid", "cannot open '" + path + "'");
    std::vector<LogRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error("ParseError", path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void write_jsonl(const std::string& path, const std::vector<LogRecord>& records) {
    std::ostringstream out;
    for (const auto& rec : records) out << record_to_json(rec).dump() << "\n";
    write_file_atomic(path, out.str());
}

EmbeddingSet read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("ConfigInvalid", "cannot open '" + path + "'");
    EmbeddingSet set;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            json obj = json::parse(line);
            set.ids.push_back(obj.at("id").get<std::string>());
            set.vectors.push_back(obj.at("vector").get<std::vector<float>>());
        } catch (const json::exception& e) {
            throw Error("ParseError", path + ": " + e.what());
        }
    }
    return set;
}

void write_embeddings(const std::string& path, const EmbeddingSet& set) {
    std::ostringstream out;
    for (size_t i = 0; i < set.ids.size(); ++i) {
        json obj;
        obj["id"] = set.ids[i];
        obj["vector"] = set.vectors[i];
        out << obj.dump() << "\n";
    }
    write_file_atomic(path, out.str());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("ConfigInvalid", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("ConfigInvalid", "cannot write '" + tmp.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
    }
    fs::rename(tmp, target);
}

}  // namespace logenc
