#pragma once

// Prompt catalog. The built-in bodies mirror the plain-text files shipped in
// prompts/; a directory of files with the same ids overrides them.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rise/textproto.hpp"

namespace rise {

inline const std::vector<std::string>& emotion6_categories() {
  static const std::vector<std::string> cats{"anger", "disgust", "fear", "joy", "sadness", "surprise", "neutral"};
  return cats;
}

class PromptCatalog {
 public:
  static PromptCatalog builtin() {
    PromptCatalog c;
    c.add({"classification.reasoning", TaskTag::Classification, PromptStage::Reasoning,
           "Analyze the image to explain how the visual elements and interactions support the emotional probability "
           "distribution {prob_distribution}, concisely in under 100 words. Describe key objects, actions, and "
           "expressions that contribute to the inferred emotional atmosphere, highlighting their connection to the "
           "emotional probabilities. Avoid directly stating the emotions or probabilities; instead, focus on the "
           "visual cues and their implications."});
    c.add({"classification.reconstruction", TaskTag::Classification, PromptStage::Reconstruction,
           "Analyze the provided image description and generate a probability distribution across emotion "
           "categories. Categories: ['anger', 'disgust', 'fear', 'joy', 'sadness', 'surprise', 'neutral']. "
           "Description: {CoTs}. Output the final answer in the following format: <answer>{'anger': prob_0, "
           "'disgust': prob_1, 'fear': prob_2, 'joy': prob_3, 'sadness': prob_4, 'surprise': prob_5, 'neutral': "
           "prob_6}</answer>. Here, prob_0, prob_1, ..., prob_6 represent the probabilities for each emotion "
           "category, and they should sum to 1. Do not provide any additional explanations or reasoning. Only "
           "return the result in the specified format."});
    c.add({"classification.reconstruction.generic", TaskTag::Classification, PromptStage::Reconstruction,
           "Analyze the provided image description and generate a probability distribution across the following "
           "categories. Categories: {categories}. Description: {CoTs}. Output the final answer in the following "
           "format: <answer>{'<category>': <probability>, ...}</answer> with exactly one entry for every listed "
           "category, and the probabilities should sum to 1. Do not provide any additional explanations or "
           "reasoning. Only return the result in the specified format."});
    c.add({"classification.r1", TaskTag::Classification, PromptStage::R1,
           "Analyze the visual elements and interactions in the image to explain the emotional atmosphere. Then, "
           "generate a probability distribution across the following emotion categories: {'anger', 'disgust', "
           "'fear', 'joy', 'sadness', 'surprise', 'neutral'}. Please output the final answer in the following "
           "format: <think>...</think><answer>{'anger': prob_0, 'disgust': prob_1, 'fear': prob_2, 'joy': prob_3, "
           "'sadness': prob_4, 'surprise': prob_5, 'neutral': prob_6}</answer>. Here, prob_0, prob_1, ..., prob_6 "
           "represent the probabilities for each emotion category, and they should sum to 1."});
    c.add({"classification.r1.generic", TaskTag::Classification, PromptStage::R1,
           "Analyze the visual elements and interactions in the image. Then, generate a probability distribution "
           "across the following categories: {categories}. Please output the final answer in the following format: "
           "<think>...</think><answer>{'<category>': <probability>, ...}</answer> with exactly one entry for every "
           "listed category, and the probabilities should sum to 1."});
    c.add({"detection.reasoning", TaskTag::Detection, PromptStage::Reasoning,
           "Please describe the reason that justify the region, with its bounding box {bbox}, contains {target}. "
           "You can focus on shape,color,texture or contextual cues. Note: Do not include specifc bounding box "
           "coordinates e.g. x1, y1, x2, y2 or directional terms (e.g., 'top-left') in the description."});
    c.add({"detection.reconstruction", TaskTag::Detection, PromptStage::Reconstruction,
           "According to the following reasoning description of a region corresponding to {target} in the image: "
           "{CoTs}, output its specific bounding box in the format: <answer>[x1, y1, x2, y2]</answer>. Please "
           "strictly follow the format."});
    c.add({"detection.r1", TaskTag::Detection, PromptStage::R1,
           "Given an image, identify the region corresponding to {target}. Provide a structured output with a "
           "reasoning explanation followed by the predicted bounding box coordinates. Format the output as: "
           "<think>Analyze the shape, color, texture, and surrounding objects that help localize the {target} in "
           "the image.</think><answer>[x1, y1, x2, y2]</answer>"});
    return c;
  }

  /// Loads `<id>.txt` files from `dir` over the built-in catalog. A single
  /// trailing newline is not part of the body.
  static PromptCatalog load(const std::filesystem::path& dir) {
    PromptCatalog c = builtin();
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::MissingFile, dir.string());
    for (auto& [id, t] : c.templates_) {
      auto path = dir / (id + ".txt");
      if (!std::filesystem::exists(path)) continue;
      std::ifstream in(path, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      std::string body = ss.str();
      if (!body.empty() && body.back() == '\n') body.pop_back();
      if (!body.empty() && body.back() == '\r') body.pop_back();
      t.body = body;
      check_template(t);
    }
    return c;
  }

  void add(PromptTemplate t) {
    check_template(t);
    templates_[t.id] = std::move(t);
  }

  const PromptTemplate& get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw Error(ErrorKind::TemplateError, "unknown template '" + id + "'");
    return it->second;
  }

  const std::map<std::string, PromptTemplate>& all() const { return templates_; }

  /// Emotion-specific bodies when the task uses exactly those categories,
  /// otherwise the generic bodies that list the categories.
  const PromptTemplate& select(const TaskKind& task, PromptStage stage) const {
    if (is_detection(task)) return get(std::string("detection.") + to_string(stage));
    std::string id = std::string("classification.") + to_string(stage);
    if (stage != PromptStage::Reasoning && categories_of(task) != emotion6_categories()) id += ".generic";
    return get(id);
  }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

/// Variables for a sample's prompt at a given stage. Ground truth is only
/// injected into reasoning prompts.
inline std::map<std::string, std::string> prompt_variables(const Sample& s, PromptStage stage,
                                                           const std::string& cot = {}) {
  std::map<std::string, std::string> vars;
  const std::string target = s.target_desc.value_or("the target object");
  if (is_classification(s.task)) vars["categories"] = render_category_list(categories_of(s.task));
  vars["target"] = target;
  switch (stage) {
    case PromptStage::Reasoning:
      if (is_classification(s.task))
        vars["prob_distribution"] = render_annotation(s.annotation, s.task);
      else
        vars["bbox"] = render_annotation(s.annotation, s.task);
      break;
    case PromptStage::Reconstruction: vars["CoTs"] = cot; break;
    case PromptStage::R1: break;
  }
  return vars;
}

inline std::string build_prompt(const PromptCatalog& catalog, const Sample& s, PromptStage stage,
                                const std::string& cot = {}) {
  return render_prompt(catalog.select(s.task, stage), prompt_variables(s, stage, cot));
}

}  // namespace rise
