#include "podgen/script.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace podgen {

const char* language_name(Language lang) { return lang == Language::Zh ? "zh" : "en"; }

namespace {

std::vector<char32_t> decode_utf8(const std::string& s) {
    std::vector<char32_t> out;
    for (std::size_t i = 0; i < s.size();) {
        const unsigned char c = (unsigned char)s[i];
        int len = 1;
        char32_t cp = c;
        if (c >= 0xF0) {
            len = 4;
            cp = c & 0x07u;
        } else if (c >= 0xE0) {
            len = 3;
            cp = c & 0x0Fu;
        } else if (c >= 0xC0) {
            len = 2;
            cp = c & 0x1Fu;
        }
        for (int k = 1; k < len && i + std::size_t(k) < s.size(); ++k)
            cp = (cp << 6) | (char32_t)((unsigned char)s[i + std::size_t(k)] & 0x3Fu);
        out.push_back(cp);
        i += std::size_t(len);
    }
    return out;
}

bool is_cjk(char32_t cp) {
    return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF);
}

bool is_ascii_letter(char32_t cp) {
    return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
}

bool is_ascii_alnum(char32_t cp) { return is_ascii_letter(cp) || (cp >= '0' && cp <= '9'); }

std::string cp_detail(char32_t cp) {
    std::ostringstream os;
    os << "U+" << std::hex << std::uppercase << (unsigned long)cp;
    return os.str();
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

Language detect_language(const std::string& text) {
    int cjk = 0, latin = 0;
    for (char32_t cp : decode_utf8(text)) {
        if (is_cjk(cp)) ++cjk;
        else if (is_ascii_letter(cp)) ++latin;
    }
    return (5 * cjk >= latin && cjk > 0) ? Language::Zh : Language::En;
}

std::string collapse_whitespace(const std::string& text) {
    std::string out;
    bool in_space = true;  // also trims the front
    for (char c : text) {
        const bool ws = c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f';
        if (ws) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::string extract_html_text(const std::string& html) {
    std::string s = html;
    auto erase_block = [&](const std::string& open, const std::string& close) {
        for (;;) {
            std::size_t b = s.find(open);
            if (b == std::string::npos) return;
            std::size_t e = s.find(close, b);
            if (e == std::string::npos) e = s.size();
            else e += close.size();
            s.erase(b, e - b);
        }
    };
    erase_block("<script", "</script>");
    erase_block("<style", "</style>");
    erase_block("<!--", "-->");
    std::string out;
    bool in_tag = false;
    for (char c : s) {
        if (c == '<') in_tag = true;
        else if (c == '>') { in_tag = false; out.push_back(' '); }
        else if (!in_tag) out.push_back(c);
    }
    static const std::pair<const char*, const char*> entities[] = {
        {"&amp;", "&"}, {"&lt;", "<"}, {"&gt;", ">"},
        {"&quot;", "\""}, {"&#39;", "'"}, {"&nbsp;", " "}};
    for (const auto& [from, to] : entities) {
        for (std::size_t p = out.find(from); p != std::string::npos; p = out.find(from, p))
            out.replace(p, std::string(from).size(), to);
    }
    return collapse_whitespace(out);
}

KnowledgeSource load_source(const SourceSpec& spec) {
    KnowledgeSource source;
    source.kind = spec.kind;
    source.origin = spec.location;
    if (spec.kind == SourceKind::Url) {
        std::string host = spec.location, path = "/";
        const std::size_t scheme = host.find("://");
        const std::size_t slash = host.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        if (slash != std::string::npos) {
            path = host.substr(slash);
            host = host.substr(0, slash);
        }
        httplib::Client client(host);
        auto res = client.Get(path);
        if (!res || res->status != 200)
            throw std::runtime_error("load_source: cannot fetch " + spec.location);
        source.resolved_text = extract_html_text(res->body);
    } else {
        std::ifstream is(spec.location, std::ios::binary);
        if (!is) throw std::runtime_error("load_source: cannot open " + spec.location);
        std::ostringstream buf;
        buf << is.rdbuf();
        source.resolved_text = collapse_whitespace(buf.str());
    }
    if (source.resolved_text.empty())
        throw std::runtime_error("load_source: empty document: " + spec.location);
    source.language = spec.force_language ? spec.language : detect_language(source.resolved_text);
    return source;
}

bool Brief::complete() const {
    return !title_authors.empty() && !abstract.empty() && !themes.empty() &&
           !key_citations.empty() && !conclusion.empty();
}

namespace {

const char* const kSectionKeysEn[5] = {"Title and Author", "Abstract",
                                       "Main Themes and Concepts", "Key Citations",
                                       "Conclusion"};
const char* const kSectionKeysZh[5] = {"标题和作者", "摘要", "主要主题和概念", "重要引文",
                                       "总结"};

}  // namespace

std::string Brief::to_text() const {
    const auto& keys = language == Language::Zh ? kSectionKeysZh : kSectionKeysEn;
    const std::string* sections[5] = {&title_authors, &abstract, &themes, &key_citations,
                                      &conclusion};
    std::string out;
    for (int i = 0; i < 5; ++i) out += "### " + std::string(keys[i]) + "\n" + *sections[i] + "\n";
    return out;
}

std::string render_template(const std::string& templ, const std::string& placeholder,
                            const std::string& value) {
    const std::size_t pos = templ.find(placeholder);
    if (pos == std::string::npos)
        throw std::runtime_error("render_template: placeholder not found: " + placeholder);
    std::string out = templ;
    out.replace(pos, placeholder.size(), value);
    return out;
}

std::string load_template(const std::string& template_dir, const std::string& stage,
                          Language lang) {
    const std::string path = template_dir + "/" + stage + "_" + language_name(lang) + ".txt";
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_template: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

Brief parse_brief(const std::string& response, Language lang) {
    const auto& keys = lang == Language::Zh ? kSectionKeysZh : kSectionKeysEn;
    Brief brief;
    brief.language = lang;
    std::string* sections[5] = {&brief.title_authors, &brief.abstract, &brief.themes,
                                &brief.key_citations, &brief.conclusion};
    int current = -1;
    std::istringstream is(response);
    std::string line;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (!t.empty() && t[0] == '#') {
            int matched = -1;
            for (int i = 0; i < 5; ++i)
                if (t.find(keys[i]) != std::string::npos) matched = i;
            if (matched >= 0) {
                current = matched;
                continue;
            }
        }
        if (current >= 0 && !t.empty()) {
            if (!sections[current]->empty()) *sections[current] += "\n";
            *sections[current] += t;
        }
    }
    if (!brief.complete()) throw std::runtime_error("parse_brief: missing sections");
    return brief;
}

ScriptJSON parse_script_json(const std::string& response, Language lang) {
    const std::size_t start = response.find('[');
    if (start == std::string::npos)
        throw std::runtime_error("parse_script_json: no JSON array in response");
    // find the matching close bracket, skipping string literals
    std::size_t end = std::string::npos;
    int depth = 0;
    bool in_string = false, escape = false;
    for (std::size_t i = start; i < response.size(); ++i) {
        const char c = response[i];
        if (in_string) {
            if (escape) escape = false;
            else if (c == '\\') escape = true;
            else if (c == '"') in_string = false;
        } else if (c == '"') {
            in_string = true;
        } else if (c == '[') {
            ++depth;
        } else if (c == ']') {
            if (--depth == 0) {
                end = i;
                break;
            }
        }
    }
    if (end == std::string::npos)
        throw std::runtime_error("parse_script_json: unterminated JSON array");
    nlohmann::json j = nlohmann::json::parse(response.substr(start, end - start + 1));
    ScriptJSON script;
    script.language = lang;
    for (const auto& item : j) {
        if (!item.is_object() || item.size() != 2 || !item.contains("speaker") ||
            !item.contains("text"))
            throw std::runtime_error(
                "parse_script_json: turn must have exactly speaker and text");
        script.turns.push_back(
            {item.at("speaker").get<std::string>(), item.at("text").get<std::string>()});
    }
    return script;
}

namespace {

constexpr int kMaxAttempts = 3;

template <typename Parse>
auto with_retries(LlmClient& llm, const std::string& prompt, const char* what, Parse parse) {
    std::string transcript;
    for (int attempt = 1;; ++attempt) {
        std::string response = llm.complete(prompt, LlmParams{});
        try {
            return parse(response);
        } catch (const std::exception& e) {
            transcript += "--- attempt " + std::to_string(attempt) + " (" + e.what() + ")\n" +
                          response + "\n";
            if (attempt == kMaxAttempts)
                throw std::runtime_error(std::string(what) + ": unparseable after " +
                                         std::to_string(kMaxAttempts) + " attempts\n" +
                                         transcript);
        }
    }
}

}  // namespace

Brief generate_brief(LlmClient& llm, const KnowledgeSource& source,
                     const std::string& template_dir) {
    const std::string prompt = render_template(load_template(template_dir, "brief", source.language),
                                               "{INPUT}", source.resolved_text);
    const Language lang = source.language;
    return with_retries(llm, prompt, "generate_brief",
                        [lang](const std::string& r) { return parse_brief(r, lang); });
}

ScriptJSON generate_script(LlmClient& llm, const Brief& brief, const std::string& template_dir) {
    const std::string prompt = render_template(
        load_template(template_dir, "script", brief.language), "{BRIEF}", brief.to_text());
    const Language lang = brief.language;
    return with_retries(llm, prompt, "generate_script",
                        [lang](const std::string& r) { return parse_script_json(r, lang); });
}

namespace {

// Classify a codepoint the whitelist rejects. `prev`/`next` give the
// word-internal context for apostrophes and hyphens.
std::string punct_rule(char32_t cp) {
    switch (cp) {
        case '!': case 0xFF01: return "PUNCT_EXCLAIM";
        case 0x2026: return "PUNCT_ELLIPSIS";
        case '(': case ')': case '[': case ']': case '{': case '}':
        case 0xFF08: case 0xFF09: case 0x3010: case 0x3011:
            return "PUNCT_PAREN";
        case '"': case '\'': case 0x201C: case 0x201D: case 0x2018: case 0x2019:
        case 0x300C: case 0x300D: case 0x300E: case 0x300F:
            return "PUNCT_QUOTE";
        case '-': case '~': case 0x2013: case 0x2014: case 0x2015: case 0xFF5E:
            return "PUNCT_DASH";
        default: return "PUNCT_OTHER";
    }
}

bool allowed_codepoint(char32_t cp, Language lang) {
    if (cp == ' ' || is_ascii_alnum(cp) || is_cjk(cp)) return true;
    if (lang == Language::En) return cp == ',' || cp == '.' || cp == '?';
    return cp == 0xFF0C || cp == 0x3002 || cp == 0xFF1F || cp == 0x3001;
}

}  // namespace

ValidationReport validate_script(const ScriptJSON& script) {
    ValidationReport report;
    auto add = [&](const std::string& rule, int turn, const std::string& detail) {
        report.violations.push_back({rule, turn, detail});
    };

    long total_words = 0, total_chars = 0;
    for (int ti = 0; ti < int(script.turns.size()); ++ti) {
        const auto& turn = script.turns[std::size_t(ti)];
        if (turn.speaker != "1" && turn.speaker != "2")
            add("SPEAKER_LABEL", ti, "speaker '" + turn.speaker + "'");
        const std::vector<char32_t> cps = decode_utf8(turn.text);
        bool in_word = false;
        int dot_run = 0;
        for (std::size_t i = 0; i < cps.size(); ++i) {
            const char32_t cp = cps[i];
            dot_run = cp == '.' ? dot_run + 1 : 0;
            if (dot_run == 3) add("PUNCT_ELLIPSIS", ti, "'...'");
            if (allowed_codepoint(cp, script.language)) {
                in_word = is_ascii_alnum(cp);
                continue;
            }
            // word-internal apostrophes and hyphens in English prose
            if (script.language == Language::En && (cp == '\'' || cp == '-') && in_word &&
                i + 1 < cps.size() && is_ascii_alnum(cps[i + 1]))
                continue;
            in_word = false;
            add(punct_rule(cp), ti, cp_detail(cp));
        }
        // length bookkeeping
        bool prev_space = true;
        for (char32_t cp : cps) {
            if (cp != ' ') {
                ++total_chars;
                if (prev_space) ++total_words;
            }
            prev_space = cp == ' ';
        }
    }
    if (!script.turns.empty() && script.turns.front().speaker != "1")
        add("HOST_OPENS", 0, "first speaker '" + script.turns.front().speaker + "'");
    if (int(script.turns.size()) > 60)
        add("TURNS_MAX", -1, std::to_string(script.turns.size()) + " turns");
    const long total = script.language == Language::Zh ? total_chars : total_words;
    if (total > 3000)
        add("LENGTH_MAX", -1,
            std::to_string(total) + (script.language == Language::Zh ? " chars" : " words"));
    report.pass = report.violations.empty();
    return report;
}

std::vector<ScriptTurn> normalize_script(const ScriptJSON& script,
                                         const TextTokenizer& tokenizer) {
    std::vector<ScriptTurn> turns;
    for (const auto& t : script.turns) {
        ScriptTurn turn;
        if (t.speaker == "1") turn.speaker_id = 1;
        else if (t.speaker == "2") turn.speaker_id = 2;
        else throw std::invalid_argument("normalize_script: unknown speaker '" + t.speaker + "'");
        turn.text_tokens = tokenizer.encode(t.text);
        turns.push_back(std::move(turn));
    }
    return merge_adjacent_turns(turns);
}

void save_script(const ScriptJSON& script, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& t : script.turns) j.push_back({{"speaker", t.speaker}, {"text", t.text}});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_script: cannot open " + path);
    os << j.dump(2) << "\n";
}

ScriptJSON load_script(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_script: cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    ScriptJSON script = parse_script_json(buf.str(), Language::En);
    std::string all;
    for (const auto& t : script.turns) all += t.text;
    script.language = detect_language(all);
    return script;
}

}  // namespace podgen
