#pragma once

#include <string>
#include <vector>

#include "podgen/llm_client.hpp"
#include "podgen/sequence.hpp"
#include "podgen/tokenizer.hpp"

namespace podgen {

enum class SourceKind { PlainText, PdfText, Url };
enum class Language { En, Zh };

const char* language_name(Language lang);

struct SourceSpec {
    SourceKind kind = SourceKind::PlainText;
    std::string location;  // file path or URL
    bool force_language = false;
    Language language = Language::En;
};

struct KnowledgeSource {
    SourceKind kind = SourceKind::PlainText;
    std::string resolved_text;
    Language language = Language::En;
    std::string origin;
};

// Ratio-based detection over the codepoints of the text.
Language detect_language(const std::string& text);

// Strip tags/scripts/styles from an HTML document and decode basic entities.
std::string extract_html_text(const std::string& html);

// Collapse all whitespace runs to single spaces and trim.
std::string collapse_whitespace(const std::string& text);

KnowledgeSource load_source(const SourceSpec& spec);

struct Brief {
    std::string title_authors, abstract, themes, key_citations, conclusion;
    Language language = Language::En;

    bool complete() const;
    std::string to_text() const;
};

struct ScriptTurnText {
    std::string speaker;  // "1" (host) or "2" (guest)
    std::string text;
};

struct ScriptJSON {
    std::vector<ScriptTurnText> turns;
    Language language = Language::En;
};

struct Violation {
    std::string rule;     // e.g. PUNCT_EXCLAIM, TURNS_MAX
    int turn_index = -1;  // -1 for script-level rules
    std::string detail;
};

struct ValidationReport {
    bool pass = false;
    std::vector<Violation> violations;
};

// Byte-exact single-placeholder substitution; throws if absent.
std::string render_template(const std::string& templ, const std::string& placeholder,
                            const std::string& value);

std::string load_template(const std::string& template_dir, const std::string& stage,
                          Language lang);

// Exposed for tests: heading-driven section split / JSON-array extraction.
Brief parse_brief(const std::string& response, Language lang);
ScriptJSON parse_script_json(const std::string& response, Language lang);

// Both generators retry the identical prompt up to 3 times on parse failure
// and then throw with every transcript attached.
Brief generate_brief(LlmClient& llm, const KnowledgeSource& source,
                     const std::string& template_dir);
ScriptJSON generate_script(LlmClient& llm, const Brief& brief, const std::string& template_dir);

ValidationReport validate_script(const ScriptJSON& script);

// Map speakers to 1/2, tokenize, and merge adjacent same-speaker turns.
std::vector<ScriptTurn> normalize_script(const ScriptJSON& script, const TextTokenizer& tokenizer);

void save_script(const ScriptJSON& script, const std::string& path);
ScriptJSON load_script(const std::string& path);

}  // namespace podgen
