#include "logenc/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "logenc/common.hpp"
#include "logenc/rng.hpp"

namespace logenc {
namespace {

const std::vector<std::string> kUsers = {
    "root",  "alice", "bob",   "carol",   "dave",  "erin", "frank",
    "grace", "heidi", "ivan",  "judy",    "karl",  "lena", "mallory",
    "oscar", "peggy", "quinn", "rupert",  "sybil", "trent"};

const std::vector<std::string> kDirs = {"usr", "var",  "etc", "opt",
                                        "home", "tmp", "srv", "lib"};

const std::vector<std::string> kFiles = {
    "syslog.conf", "auth.log", "daemon.bin", "cron.tab",
    "sshd_config", "app.jar",  "run.sh",     "core.dump"};

std::string sample_ip(Rng& rng) {
    static const int kFirst[] = {10, 172, 192};
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%d.%d.%d.%d", kFirst[rng.below(3)],
                  static_cast<int>(rng.below(256)), static_cast<int>(rng.below(256)),
                  static_cast<int>(rng.below(254) + 1));
    return buf;
}

std::string sample_pid(Rng& rng) { return std::to_string(100 + rng.below(65436)); }

std::string sample_hex(Rng& rng) {
    static const char* kDigits = "0123456789abcdef";
    std::string out(8, '0');
    for (char& c : out) c = kDigits[rng.below(16)];
    return out;
}

std::string sample_path(Rng& rng) {
    std::string out = "/" + kDirs[rng.below(kDirs.size())];
    if (rng.bernoulli(0.5)) out += "/" + kDirs[rng.below(kDirs.size())];
    return out + "/" + kFiles[rng.below(kFiles.size())];
}

std::string sample_slot(const std::string& type, Rng& rng) {
    if (type == "ip") return sample_ip(rng);
    if (type == "user") return kUsers[rng.below(kUsers.size())];
    if (type == "pid") return sample_pid(rng);
    if (type == "path") return sample_path(rng);
    if (type == "hex") return sample_hex(rng);
    throw Error("ConfigInvalid", "unknown slot type {" + type + "}");
}

const std::vector<std::string> kSlotTypes = {"ip", "user", "pid", "path", "hex"};
const std::vector<std::string> kAllMutators = {"field_shuffle", "slot_type_swap",
                                               "template_splice"};

struct Part {
    bool is_slot = false;
    std::string text;  // literal text, or the slot type name
};

std::vector<Part> parse_pattern(const std::string& pattern) {
    std::vector<Part> parts;
    size_t pos = 0;
    while (pos < pattern.size()) {
        size_t open = pattern.find('{', pos);
        size_t close = open == std::string::npos ? open : pattern.find('}', open);
        bool slot = close != std::string::npos;
        std::string type;
        if (slot) {
            type = pattern.substr(open + 1, close - open - 1);
            slot = std::find(kSlotTypes.begin(), kSlotTypes.end(), type) != kSlotTypes.end();
        }
        if (!slot) {
            // A brace that does not open a known slot is literal text (JSON
            // patterns are full of these); skip past it and keep scanning.
            size_t next = open == std::string::npos ? pattern.size() : open + 1;
            if (parts.empty() || parts.back().is_slot) parts.push_back({false, ""});
            parts.back().text += pattern.substr(pos, next - pos);
            pos = next;
            continue;
        }
        if (open > pos) {
            if (parts.empty() || parts.back().is_slot) parts.push_back({false, ""});
            parts.back().text += pattern.substr(pos, open - pos);
        }
        parts.push_back({true, type});
        pos = close + 1;
    }
    return parts;
}

struct Rendered {
    std::string raw;
    std::vector<size_t> slot_parts;  // indices into parts that are slots
    std::vector<std::string> values;  // sampled value per part (empty for literals)
};

Rendered render(const std::vector<Part>& parts, Rng& rng) {
    Rendered out;
    out.values.resize(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].is_slot) {
            out.values[i] = sample_slot(parts[i].text, rng);
            out.slot_parts.push_back(i);
        }
    }
    for (size_t i = 0; i < parts.size(); ++i)
        out.raw += parts[i].is_slot ? out.values[i] : parts[i].text;
    return out;
}

std::string assemble(const std::vector<Part>& parts, const Rendered& r) {
    std::string raw;
    for (size_t i = 0; i < parts.size(); ++i)
        raw += parts[i].is_slot ? r.values[i] : parts[i].text;
    return raw;
}

/// Parses raw as a flat JSON object of strings; returns false if it is not one.
bool parse_fields(const std::string& raw, std::map<std::string, std::string>& fields) {
    auto j = nlohmann::json::parse(raw, nullptr, false);
    if (!j.is_object()) return false;
    std::map<std::string, std::string> out;
    for (auto& [key, value] : j.items()) {
        if (!value.is_string()) return false;
        out[key] = value.get<std::string>();
    }
    fields = std::move(out);
    return true;
}

std::string mutate_field_shuffle(const std::string& raw, Rng& rng) {
    std::map<std::string, std::string> fields;
    if (parse_fields(raw, fields) && fields.size() >= 2) {
        // Structured record: rotate the values across the keys so every
        // column holds a value from some other column.
        std::vector<std::string> values;
        for (auto& [key, value] : fields) values.push_back(value);
        size_t shift = 1 + rng.below(values.size() - 1);
        std::rotate(values.begin(), values.begin() + shift, values.end());
        nlohmann::json j;
        size_t i = 0;
        for (auto& [key, value] : fields) j[key] = values[i++];
        return j.dump();
    }
    std::vector<std::string> tokens = split_whitespace(raw);
    if (tokens.size() < 2) return raw;
    std::vector<std::string> shuffled = tokens;
    for (size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    if (shuffled == tokens) std::rotate(shuffled.begin(), shuffled.begin() + 1, shuffled.end());
    std::string out;
    for (size_t i = 0; i < shuffled.size(); ++i) {
        if (i > 0) out += ' ';
        out += shuffled[i];
    }
    return out;
}

std::string mutate_slot_type_swap(const std::vector<Part>& parts, const Rendered& r,
                                  Rng& rng) {
    if (r.slot_parts.empty()) return r.raw;
    Rendered mutated = r;
    size_t pick = r.slot_parts[rng.below(r.slot_parts.size())];
    const std::string& own = parts[pick].text;
    std::string other = own;
    while (other == own) other = kSlotTypes[rng.below(kSlotTypes.size())];
    mutated.values[pick] = sample_slot(other, rng);
    return assemble(parts, mutated);
}

std::string mutate_template_splice(const std::string& raw,
                                   const std::vector<std::vector<Part>>& all_parts,
                                   size_t own_spec, Rng& rng) {
    size_t other = own_spec;
    if (all_parts.size() > 1)
        while (other == own_spec) other = rng.below(all_parts.size());
    Rendered donor = render(all_parts[other], rng);
    std::vector<std::string> a = split_whitespace(raw);
    std::vector<std::string> b = split_whitespace(donor.raw);
    if (a.empty() || b.empty()) return raw + " " + donor.raw;
    std::string out;
    for (size_t i = 0; i < (a.size() + 1) / 2; ++i) {
        if (!out.empty()) out += ' ';
        out += a[i];
    }
    for (size_t i = b.size() / 2; i < b.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += b[i];
    }
    return out;
}

}  // namespace

std::vector<TemplateSpec> synth_family(const std::string& name) {
    auto plain = [](std::string pattern) {
        return TemplateSpec{std::move(pattern), 1.0, {}};
    };
    if (name == "syslog-a") {
        std::vector<TemplateSpec> specs;
        specs.push_back(plain("sshd accepted password for {user} from {ip} port {pid} ssh2"));
        specs.push_back(plain("sudo {user} : TTY=pts/0 ; PWD={path} ; COMMAND={path}"));
        specs.push_back(plain("cron session opened for user {user} by uid {pid}"));
        specs.push_back(plain("kernel device eth0 link is up at {pid} Mbps"));
        specs.push_back(plain("systemd started service unit {path} with pid {pid}"));
        specs.push_back(plain("nginx access from {ip} GET {path} status 200 bytes {pid}"));
        specs.push_back(plain("postfix queued message {hex} from {user} size {pid}"));
        specs.push_back(plain("ntpd time sync with server {ip} offset {pid} ms"));
        specs.push_back(plain("dhclient lease renewed for {ip} valid {pid} seconds"));
        specs.push_back(plain("su session closed for user {user} on tty {pid}"));
        specs.push_back(plain("auditd watch triggered on {path} by {user} syscall {pid}"));
        specs.push_back(plain("firewalld dropped packet from {ip} to {ip} proto tcp"));
        specs.push_back(plain("docker container {hex} started image {path} by {user}"));
        specs.push_back(plain("kubelet pod {hex} scheduled on node {user} memory {pid} Mi"));
        specs.push_back(plain("rsyslogd log rotation completed for {path} size {pid} bytes"));
        specs.push_back(plain("polkitd authorization granted to {user} for action {path}"));
        specs.push_back(plain("agetty login prompt ready on tty{pid} speed 38400"));
        specs.push_back(plain("snmpd trap sent to {ip} community {user} oid {hex}"));
        specs.push_back(plain("chronyd clock slew {pid} ppm source {ip} stratum 3"));
        specs.push_back(plain("smartd disk {path} temperature {pid} celsius ok"));
        return specs;
    }
    if (name == "syslog-b") {
        std::vector<TemplateSpec> specs;
        specs.push_back(plain("vault secret lease revoked path {path} requester {user}"));
        specs.push_back(plain("consul service health check flapping for {user} at {ip}"));
        specs.push_back(plain("etcd raft term advanced to {pid} leader {hex}"));
        specs.push_back(plain("zookeeper quorum follower {ip} lagging {pid} ticks"));
        specs.push_back(plain("cassandra compaction finished table {path} duration {pid} ms"));
        specs.push_back(plain("kafka partition rebalance group {user} generation {pid}"));
        specs.push_back(plain("redis slowlog entry {hex} command GET duration {pid} us"));
        specs.push_back(plain("mongod replica heartbeat from {ip} delay {pid} ms"));
        specs.push_back(plain("elasticsearch shard relocation index {user} node {hex}"));
        specs.push_back(plain("prometheus scrape target {ip} failed timeout {pid} ms"));
        return specs;
    }
    if (name == "jsonl") {
        // Splicing two JSON lines rarely yields valid JSON, so structured
        // templates stick to the mutators that preserve parseability.
        auto ev = [](std::string pattern) {
            return TemplateSpec{std::move(pattern), 1.0, {"field_shuffle", "slot_type_swap"}};
        };
        std::vector<TemplateSpec> specs;
        specs.push_back(ev(R"({"event":"process_start","host":"{user}","msg":"started {path} pid {pid}","severity":"info"})"));
        specs.push_back(ev(R"({"event":"process_stop","host":"{user}","msg":"stopped {path} exit 0","severity":"info"})"));
        specs.push_back(ev(R"({"event":"net_conn","host":"{user}","msg":"connection to {ip} port {pid}","severity":"notice"})"));
        specs.push_back(ev(R"({"event":"auth_ok","host":"{user}","msg":"user {user} authenticated from {ip}","severity":"info"})"));
        specs.push_back(ev(R"({"event":"auth_fail","host":"{user}","msg":"failed login for {user} from {ip}","severity":"warn"})"));
        specs.push_back(ev(R"({"event":"file_write","host":"{user}","msg":"wrote {path} bytes {pid}","severity":"info"})"));
        specs.push_back(ev(R"({"event":"dns_query","host":"{user}","msg":"resolved {path} to {ip}","severity":"notice"})"));
        specs.push_back(ev(R"({"event":"usb_attach","host":"{user}","msg":"device {hex} attached","severity":"warn"})"));
        return specs;
    }
    throw Error("ConfigInvalid", "unknown synth family: " + name);
}

std::vector<LogRecord> synth_generate(const std::vector<TemplateSpec>& specs, size_t n,
                                      uint64_t seed, double anomaly_rate,
                                      const std::string& source_name) {
    if (specs.empty()) throw Error("NoSpecs", "generator needs at least one template");
    if (n < 1) throw Error("ConfigInvalid", "record count must be positive");
    if (!(anomaly_rate >= 0.0 && anomaly_rate < 1.0))
        throw Error("ConfigInvalid", "anomaly rate must lie in [0, 1)");

    double total = 0.0;
    for (const auto& spec : specs) {
        if (!(spec.weight > 0.0)) throw Error("ConfigInvalid", "template weights must be positive");
        total += spec.weight;
    }
    std::vector<double> cumulative;
    double acc = 0.0;
    for (const auto& spec : specs) {
        acc += spec.weight / total;
        cumulative.push_back(acc);
    }
    cumulative.back() = 1.0;

    std::vector<std::vector<Part>> all_parts;
    for (const auto& spec : specs) all_parts.push_back(parse_pattern(spec.pattern));

    std::vector<LogRecord> records;
    records.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, "synth", i));
        double u = rng.next_double();
        size_t spec_idx =
            std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
        if (spec_idx >= specs.size()) spec_idx = specs.size() - 1;

        Rendered r = render(all_parts[spec_idx], rng);
        bool anomalous = anomaly_rate > 0.0 && rng.bernoulli(anomaly_rate);

        LogRecord rec;
        char idbuf[24];
        std::snprintf(idbuf, sizeof(idbuf), "%06zu", i);
        rec.id = source_name + "-" + idbuf;
        rec.source = source_name;
        rec.raw = r.raw;
        rec.meta["template_id"] = "t" + std::to_string(spec_idx);
        rec.meta["anomaly"] = anomalous ? "1" : "0";

        if (anomalous) {
            const auto& pool = specs[spec_idx].anomaly_mutators.empty()
                                   ? kAllMutators
                                   : specs[spec_idx].anomaly_mutators;
            const std::string& mutator = pool[rng.below(pool.size())];
            if (mutator == "field_shuffle") {
                rec.raw = mutate_field_shuffle(r.raw, rng);
            } else if (mutator == "slot_type_swap") {
                rec.raw = mutate_slot_type_swap(all_parts[spec_idx], r, rng);
            } else if (mutator == "template_splice") {
                rec.raw = mutate_template_splice(r.raw, all_parts, spec_idx, rng);
            } else {
                throw Error("ConfigInvalid", "unknown anomaly mutator: " + mutator);
            }
            rec.meta["mutator"] = mutator;
        }

        std::map<std::string, std::string> fields;
        if (parse_fields(rec.raw, fields)) rec.fields = std::move(fields);
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace logenc
