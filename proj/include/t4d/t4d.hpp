#pragma once

#include "t4d/assignment.hpp"
#include "t4d/association.hpp"
#include "t4d/core.hpp"
#include "t4d/curves.hpp"
#include "t4d/geometry.hpp"
#include "t4d/io/formats.hpp"
#include "t4d/io/ply.hpp"
#include "t4d/kdtree.hpp"
#include "t4d/matrix.hpp"
#include "t4d/metrics.hpp"
#include "t4d/numerics.hpp"
#include "t4d/synth.hpp"
