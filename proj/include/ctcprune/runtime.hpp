// Copyright 2026 The ctcprune Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

namespace ctcprune {

/// Every forward pass allocates and frees a few hundred small matrices.
/// With glibc's default trim threshold the freed heap top is returned to
/// the OS and page-faulted back on the next pass; this keeps it resident.
/// No-op on other C libraries.
void keep_heap_resident();

}  // namespace ctcprune
