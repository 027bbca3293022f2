#pragma once

#include "dlo/config.hpp"
#include "dlo/error.hpp"
#include "dlo/eval.hpp"
#include "dlo/ground.hpp"
#include "dlo/heightgrid.hpp"
#include "dlo/image.hpp"
#include "dlo/keyvalue.hpp"
#include "dlo/lie.hpp"
#include "dlo/manifest.hpp"
#include "dlo/odometry.hpp"
#include "dlo/pointcloud.hpp"
#include "dlo/registration.hpp"
#include "dlo/synth.hpp"
#include "dlo/trajectory.hpp"
