// Case readers: MATPOWER-style M-file tables and the per-unit JSON mirror.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "vsa/network.hpp"

namespace vsa {
namespace {

using json = nlohmann::json;

struct Row {
    int line;
    std::vector<double> values;
};

struct MTables {
    std::optional<double> base_mva;
    std::vector<Row> bus, gen, branch;
};

std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\'') in_str = !in_str;
        if (line[i] == '%' && !in_str) return line.substr(0, i);
    }
    return line;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& tok, int line, const std::string& field) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    if (!tok.empty() && *first == '+') ++first;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || p != last) {
        if (tok == "Inf" || tok == "inf") return std::numeric_limits<double>::infinity();
        if (tok == "-Inf" || tok == "-inf") return -std::numeric_limits<double>::infinity();
        throw ParseError(line, field, "expected a number, got '" + tok + "'");
    }
    return v;
}

void split_row(const std::string& text, int line, const std::string& table, std::vector<Row>& out) {
    std::string cleaned = text;
    std::replace(cleaned.begin(), cleaned.end(), ',', ' ');
    std::istringstream is(cleaned);
    Row row{line, {}};
    std::string tok;
    while (is >> tok) {
        row.values.push_back(parse_number(
            tok, line, table + " row " + std::to_string(out.size() + 1) + " col " + std::to_string(row.values.size() + 1)));
    }
    if (!row.values.empty()) out.push_back(std::move(row));
}

MTables scan_mfile(std::string_view source) {
    MTables t;
    std::istringstream in{std::string(source)};
    std::string raw;
    int line_no = 0;
    std::vector<Row>* open = nullptr;
    std::string open_name;
    int open_line = 0;
    std::vector<Row> discard;

    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = strip_comment(raw);
        if (open) {
            auto close = line.find(']');
            std::string body = close == std::string::npos ? line : line.substr(0, close);
            std::size_t start = 0;
            for (std::size_t i = 0; i <= body.size(); ++i) {
                if (i == body.size() || body[i] == ';') {
                    split_row(body.substr(start, i - start), line_no, open_name, *open);
                    start = i + 1;
                }
            }
            if (close != std::string::npos) open = nullptr;
            continue;
        }
        const std::string s = trim(line);
        if (s.rfind("mpc.", 0) != 0) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, s, "expected an assignment");
        const std::string key = trim(std::string_view(s).substr(4, eq - 4));
        std::string rhs = trim(std::string_view(s).substr(eq + 1));
        if (key == "baseMVA") {
            if (!rhs.empty() && rhs.back() == ';') rhs.pop_back();
            t.base_mva = parse_number(trim(rhs), line_no, "baseMVA");
            continue;
        }
        std::vector<Row>* target = nullptr;
        if (key == "bus") target = &t.bus;
        else if (key == "gen") target = &t.gen;
        else if (key == "branch") target = &t.branch;
        if (!rhs.empty() && rhs.front() == '[') {
            // Tables we do not consume (gencost, areas, ...) are still scanned to their close.
            discard.clear();
            open = target ? target : &discard;
            open_name = key;
            open_line = line_no;
            std::string rest = rhs.substr(1);
            auto close = rest.find(']');
            std::string body = close == std::string::npos ? rest : rest.substr(0, close);
            std::size_t start = 0;
            for (std::size_t i = 0; i <= body.size(); ++i) {
                if (i == body.size() || body[i] == ';') {
                    split_row(body.substr(start, i - start), line_no, open_name, *open);
                    start = i + 1;
                }
            }
            if (close != std::string::npos) open = nullptr;
        } else if (target) {
            throw ParseError(line_no, key, "expected a '[' table");
        }
    }
    if (open) throw ParseError(open_line, open_name, "table is not closed with ']'");
    if (!t.base_mva) throw ParseError(line_no, "baseMVA", "missing mpc.baseMVA");
    if (t.bus.empty()) throw ParseError(line_no, "bus", "missing or empty mpc.bus table");
    if (t.branch.empty()) throw ParseError(line_no, "branch", "missing or empty mpc.branch table");
    return t;
}

void require_cols(const Row& r, std::size_t n, const std::string& table) {
    if (r.values.size() < n)
        throw ParseError(r.line, table, "expected at least " + std::to_string(n) + " columns, found " +
                                            std::to_string(r.values.size()));
}

int as_int(double v, int line, const std::string& field) {
    if (v != std::floor(v)) throw ParseError(line, field, "expected an integer");
    return static_cast<int>(v);
}

NetworkModel from_mfile(std::string_view source, std::string name) {
    const MTables t = scan_mfile(source);
    const double base = *t.base_mva;

    std::vector<Bus> buses;
    for (const auto& r : t.bus) {
        require_cols(r, 13, "bus");
        const auto& v = r.values;
        Bus b;
        b.id = as_int(v[0], r.line, "bus_i");
        const int type = as_int(v[1], r.line, "type");
        if (type < 1 || type > 3)
            throw ParseError(r.line, "type", "unsupported bus type " + std::to_string(type));
        b.type = static_cast<BusType>(type);
        b.pd = v[2] / base;
        b.qd = v[3] / base;
        b.gs = v[4] / base;
        b.bs = v[5] / base;
        b.vm = v[7];
        b.va_deg = v[8];
        b.base_kv = v[9];
        b.vmax = v[11];
        b.vmin = v[12];
        buses.push_back(b);
    }

    std::vector<Generator> gens;
    for (const auto& r : t.gen) {
        require_cols(r, 10, "gen");
        const auto& v = r.values;
        Generator g;
        g.bus = as_int(v[0], r.line, "gen bus");
        g.pg = v[1] / base;
        g.qg = v[2] / base;
        g.qmax = v[3] / base;
        g.qmin = v[4] / base;
        g.vsetpoint = v[5];
        g.in_service = v[7] > 0.0;
        g.pmax = v[8] / base;
        g.pmin = v[9] / base;
        gens.push_back(g);
    }

    std::vector<Branch> branches;
    for (const auto& r : t.branch) {
        require_cols(r, 11, "branch");
        const auto& v = r.values;
        Branch br;
        br.from = as_int(v[0], r.line, "fbus");
        br.to = as_int(v[1], r.line, "tbus");
        br.r = v[2];
        br.x = v[3];
        br.b = v[4];
        br.ratio = v[8] == 0.0 ? 1.0 : v[8];
        br.shift_deg = v[9];
        br.in_service = v[10] > 0.0;
        branches.push_back(br);
    }
    return NetworkModel::create(base, std::move(buses), std::move(branches), std::move(gens), std::move(name));
}

int line_of_offset(std::string_view s, std::size_t offset) {
    offset = std::min(offset, s.size());
    return 1 + static_cast<int>(std::count(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

BusType bus_type_from(const std::string& s) {
    if (s == "slack") return BusType::Slack;
    if (s == "PV") return BusType::PV;
    if (s == "PQ") return BusType::PQ;
    throw ValidationError("unknown bus type '" + s + "'");
}

NetworkModel from_json(std::string_view source, std::string name) {
    json j;
    try {
        j = json::parse(source);
    } catch (const json::parse_error& e) {
        throw ParseError(line_of_offset(source, e.byte), "json", e.what());
    }
    auto field = [](const json& obj, const char* key, const std::string& where) -> const json& {
        if (!obj.contains(key)) throw ParseError(0, where + "." + key, "missing field");
        return obj.at(key);
    };
    try {
        std::vector<Bus> buses;
        for (std::size_t i = 0; i < j.at("buses").size(); ++i) {
            const auto& o = j["buses"][i];
            const std::string w = "buses[" + std::to_string(i) + "]";
            Bus b;
            b.id = field(o, "id", w).get<int>();
            b.type = bus_type_from(field(o, "type", w).get<std::string>());
            b.pd = field(o, "pd", w).get<double>();
            b.qd = field(o, "qd", w).get<double>();
            b.gs = o.value("gs", 0.0);
            b.bs = o.value("bs", 0.0);
            b.vm = o.value("vm", 1.0);
            b.va_deg = o.value("va_deg", 0.0);
            b.base_kv = o.value("base_kv", 0.0);
            b.vmax = o.value("vmax", 1.1);
            b.vmin = o.value("vmin", 0.9);
            buses.push_back(b);
        }
        std::vector<Branch> branches;
        for (std::size_t i = 0; i < j.at("branches").size(); ++i) {
            const auto& o = j["branches"][i];
            const std::string w = "branches[" + std::to_string(i) + "]";
            Branch br;
            br.from = field(o, "from", w).get<int>();
            br.to = field(o, "to", w).get<int>();
            br.r = field(o, "r", w).get<double>();
            br.x = field(o, "x", w).get<double>();
            br.b = o.value("b", 0.0);
            br.ratio = o.value("ratio", 1.0);
            br.shift_deg = o.value("shift_deg", 0.0);
            br.in_service = o.value("in_service", true);
            br.scale = o.value("scale", 1.0);
            branches.push_back(br);
        }
        std::vector<Generator> gens;
        if (j.contains("generators")) {
            for (std::size_t i = 0; i < j["generators"].size(); ++i) {
                const auto& o = j["generators"][i];
                const std::string w = "generators[" + std::to_string(i) + "]";
                Generator g;
                g.bus = field(o, "bus", w).get<int>();
                g.pg = field(o, "pg", w).get<double>();
                g.qg = o.value("qg", 0.0);
                g.qmax = field(o, "qmax", w).get<double>();
                g.qmin = field(o, "qmin", w).get<double>();
                g.vsetpoint = field(o, "vsetpoint", w).get<double>();
                g.pmax = o.value("pmax", 0.0);
                g.pmin = o.value("pmin", 0.0);
                g.in_service = o.value("in_service", true);
                gens.push_back(g);
            }
        }
        if (name.empty()) name = j.value("name", std::string{});
        return NetworkModel::create(field(j, "base_mva", "case").get<double>(), std::move(buses),
                                    std::move(branches), std::move(gens), std::move(name));
    } catch (const json::exception& e) {
        throw ParseError(0, "json", e.what());
    }
}

}  // namespace

NetworkModel load_case(std::string_view source, std::string name) {
    const auto first = source.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos && source[first] == '{') return from_json(source, std::move(name));
    return from_mfile(source, std::move(name));
}

NetworkModel load_case_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open case file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string stem = path;
    if (auto slash = stem.find_last_of("/\\"); slash != std::string::npos) stem = stem.substr(slash + 1);
    if (auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);
    return load_case(ss.str(), stem);
}

std::string to_json_text(const NetworkModel& model) {
    json j;
    j["format"] = "vsa-case";
    j["version"] = 1;
    j["name"] = model.name();
    j["base_mva"] = model.base_mva();
    j["buses"] = json::array();
    for (const auto& b : model.buses()) {
        j["buses"].push_back({{"id", b.id},
                              {"type", std::string(to_string(b.type))},
                              {"pd", b.pd},
                              {"qd", b.qd},
                              {"gs", b.gs},
                              {"bs", b.bs},
                              {"vm", b.vm},
                              {"va_deg", b.va_deg},
                              {"base_kv", b.base_kv},
                              {"vmax", b.vmax},
                              {"vmin", b.vmin}});
    }
    j["branches"] = json::array();
    for (const auto& br : model.branches()) {
        j["branches"].push_back({{"from", br.from},
                                 {"to", br.to},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b", br.b},
                                 {"ratio", br.ratio},
                                 {"shift_deg", br.shift_deg},
                                 {"in_service", br.in_service},
                                 {"scale", br.scale}});
    }
    j["generators"] = json::array();
    for (const auto& g : model.generators()) {
        j["generators"].push_back({{"bus", g.bus},
                                   {"pg", g.pg},
                                   {"qg", g.qg},
                                   {"qmax", g.qmax},
                                   {"qmin", g.qmin},
                                   {"vsetpoint", g.vsetpoint},
                                   {"pmax", g.pmax},
                                   {"pmin", g.pmin},
                                   {"in_service", g.in_service}});
    }
    return j.dump(2);
}

}  // namespace vsa
