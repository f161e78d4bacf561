#pragma once

#include "diffcontact/ad.hpp"
#include "diffcontact/control.hpp"
#include "diffcontact/diff.hpp"
#include "diffcontact/dynamics.hpp"
#include "diffcontact/fit.hpp"
#include "diffcontact/geometry.hpp"
#include "diffcontact/io.hpp"
#include "diffcontact/optim.hpp"
#include "diffcontact/parallel.hpp"
#include "diffcontact/render.hpp"
#include "diffcontact/scalar.hpp"
#include "diffcontact/scenario.hpp"
#include "diffcontact/spatial.hpp"
#include "diffcontact/sysid.hpp"
