/* Copyright 2026 The piep Authors. All Rights Reserved.

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

#pragma once

namespace piep {

// Tool version, embedded in every file the CLI writes.
inline constexpr const char* kToolVersion = "1.0.0";

// Schema tags. Bump on any incompatible layout change; loaders refuse
// mismatched tags by name so stale artifacts fail loudly.
inline constexpr const char* kDatasetSchema = "piep.dataset/v1";
inline constexpr const char* kModelSchema = "piep.model/v1";
inline constexpr const char* kFeatureSchema = "piep.features/v1";
inline constexpr const char* kReportSchema = "piep.report/v1";

}  // namespace piep
