/* Copyright 2026 The Flowsense Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef FLOWSENSE_LABELS_HPP_
#define FLOWSENSE_LABELS_HPP_

#include <map>
#include <string>
#include <vector>

#include "flowsense/common.hpp"

namespace flowsense {

/// Ordered set of class names. Class identity everywhere else in the library
/// is an index into this ordering; ties and tie-breaks use index order. One
/// member is the distinguished background class used by the relevant-coverage
/// metric.
class LabelSpace {
 public:
  LabelSpace() = default;

  LabelSpace(std::vector<std::string> names, const std::string& background)
      : names_(std::move(names)) {
    for (size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], static_cast<int>(i)).second)
        throw DataError("duplicate class name: " + names_[i]);
    }
    auto it = index_.find(background);
    if (it == index_.end())
      throw DataError("background class '" + background + "' not in class set");
    background_ = it->second;
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }
  int background() const { return background_; }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown class label: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  /// The paper's 10-class instantiation.
  static LabelSpace paper_classes() {
    return LabelSpace({"WebBrowsing", "SocialMedia", "Video", "Email", "VoIP",
                       "Chat", "Gaming", "OnlineDocs", "Azure", "Background"},
                      "Background");
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> index_;
  int background_ = -1;
};

}  // namespace flowsense

#endif  // FLOWSENSE_LABELS_HPP_
