#pragma once

// Synthetic reasoning tasks: 4x4 Sudoku, 3-operand countdown, modular
// addition. Each instance is a prompt/answer token pair plus a payload the
// verifier checks against.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "weft/rng.hpp"

namespace weft {

// Fixed symbol table shared by every task. Ids are dense from 0.
class Vocab {
public:
    static const Vocab& standard();

    int size() const { return static_cast<int>(symbols_.size()); }
    int id(std::string_view symbol) const;
    const std::string& symbol(int id) const;
    int mask_id() const { return mask_id_; }
    int pad_id() const { return pad_id_; }
    int digit(int d) const { return id(std::string(1, static_cast<char>('0' + d))); }

    // Single-character symbols map one-to-one onto characters; pad and mask
    // render as '_' and '?'.
    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;

private:
    Vocab();
    std::vector<std::string> symbols_;
    int mask_id_;
    int pad_id_;
};

enum class TaskKind { sudoku4, countdown, modadd };

std::string to_string(TaskKind kind);
TaskKind parse_task(std::string_view name);

struct TaskInstance {
    TaskKind task = TaskKind::modadd;
    std::vector<int> prompt;
    // Fixed-width per task; unused tail positions hold the pad token.
    std::vector<int> answer;
    nlohmann::json payload;

    std::vector<int> sequence() const;
    std::size_t length() const { return prompt.size() + answer.size(); }
};

// Answer width for each task (also the decode generation length).
std::size_t answer_length(TaskKind task, int modulus = 10);

// ---- Sudoku 4x4 ----
using Grid4 = std::array<int, 16>;  // 0 = blank, otherwise 1..4

bool sudoku4_valid(const Grid4& grid);
// Number of completions of `puzzle`, stopping once `limit` is reached.
int sudoku4_count_solutions(const Grid4& puzzle, int limit = 2);
TaskInstance sudoku4_instance(const Grid4& puzzle, const Grid4& solution);
TaskInstance gen_sudoku4(RandomStream& rng, int n_givens);

// ---- Countdown ----
// Evaluates a +,-,* expression over non-negative integers with standard
// precedence. Returns nullopt on malformed input.
std::optional<long long> eval_expression(std::string_view expr);
TaskInstance countdown_instance(std::array<int, 3> operands, int target, std::string_view expression);
TaskInstance gen_countdown_mini(RandomStream& rng);

// ---- Modular addition ----
TaskInstance modadd_instance(int a, int b, int modulus);
TaskInstance gen_modadd(RandomStream& rng, int modulus);

// Exact, task-specific check of decoded answer tokens. Malformed answers are
// rejected, never an error.
bool verify(const TaskInstance& instance, std::span<const int> answer);

struct TaskSpec {
    TaskKind kind = TaskKind::modadd;
    int modulus = 10;
    // Sudoku givens are drawn uniformly from [min_givens, max_givens].
    int min_givens = 8;
    int max_givens = 12;
};

enum class Split { train, eval };

// Instance `index` of a split. Train and eval draw from disjoint seed ranges.
TaskInstance generate_instance(const TaskSpec& spec, std::uint64_t seed, Split split, std::uint64_t index);
std::vector<TaskInstance> generate_dataset(const TaskSpec& spec, std::uint64_t seed, Split split, std::size_t n);

// Line-delimited JSON dataset: {"task", "prompt_ids", "answer_ids", "payload"}.
nlohmann::json to_json(const TaskInstance& instance);
TaskInstance instance_from_json(const nlohmann::json& j);
void save_dataset(const std::filesystem::path& path, std::span<const TaskInstance> data);
std::vector<TaskInstance> load_dataset(const std::filesystem::path& path);

}  // namespace weft
