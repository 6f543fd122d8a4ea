// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "morphforge/errors.hpp"
#include "morphforge/femesh_io.hpp"
#include "morphforge/grid.hpp"
#include "morphforge/image_io.hpp"
#include "morphforge/json_io.hpp"
#include "morphforge/mesh.hpp"
#include "morphforge/metrics.hpp"
#include "morphforge/morphing.hpp"
#include "morphforge/pipeline.hpp"
#include "morphforge/primitives.hpp"
#include "morphforge/registration.hpp"
#include "morphforge/signals.hpp"
#include "morphforge/stl_io.hpp"
#include "morphforge/vec3.hpp"
#include "morphforge/voxelizer.hpp"
