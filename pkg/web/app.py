"""
功率最小化服务 - Flask 后端

=== 这个文件是做什么的？ ===
把求解、扫描、缓存统计包装成JSON接口，供绘图脚本或其他服务远程调用。

=== API接口说明 ===
- GET  /api/status       : 系统状态
- GET  /api/scenarios    : 内置场景（场景JSON格式）与扫描预设
- POST /api/solve        : 求解单个需求点
- POST /api/sweep        : 需求扫描，返回CSV
- GET  /api/cache/stats  : 缓存统计
- POST /api/cache/clear  : 清空缓存

=== 请求示例 ===
POST /api/solve
{"scenario": "builtin:mi", "antennas": 1, "mode": "igs", "extension": 1, "demand": 0.5}
scenario 也可以直接是场景JSON对象。
"""
import json
import sys
import logging
from pathlib import Path

logger = logging.getLogger(__name__)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[logging.StreamHandler()]
)

# ==================== 路径设置 ====================
sys.path.append(str(Path(__file__).parent.parent))

from dotenv import load_dotenv
from flask import Flask, Response, jsonify, request

from imac_modules import (
    SWEEP_PRESETS,
    IMACError,
    InputError,
    SignalingConfig,
    SweepSpec,
    builtin_scenarios,
    dump_scenario,
    emit_table,
    load_scenario,
    minimize_sum_power,
    parse_demands,
    parse_modes,
    parse_scenario,
    run_sweep,
)

load_dotenv()

# ==================== 创建Flask应用 ====================
app = Flask(__name__)

# ==================== 全局变量 ====================
power_system = None


def get_system():
    """第一次请求时创建系统实例"""
    global power_system
    if power_system is None:
        from config import IMACConfig
        from main import PowerMinimizationSystem
        power_system = PowerMinimizationSystem(IMACConfig.from_env())
        logger.info("✅ 系统初始化完成")
    return power_system


def _error(message: str, status: int = 400):
    return jsonify({'success': False, 'message': message}), status


def _scenario_from_request(data: dict, system):
    """scenario 字段可以是场景ID/路径字符串，也可以是场景JSON对象"""
    source = data.get('scenario', system.config.default_scenario)
    antennas = data.get('antennas')
    if isinstance(source, dict):
        scenario = parse_scenario(json.dumps(source))
        return scenario.truncated(int(antennas)) if antennas else scenario
    return load_scenario(str(source), antennas=int(antennas) if antennas else None)


def _user_key(user):
    return f"{user[0] + 1}-{user[1] + 1}"


# ==================== 路由定义 ====================

@app.route('/api/status')
def get_status():
    """系统状态"""
    return jsonify({
        'initialized': power_system is not None,
        'message': '系统已就绪' if power_system else '系统将在第一次请求时初始化',
    })


@app.route('/api/scenarios')
def get_scenarios():
    """内置场景和扫描预设"""
    scenarios = {f"builtin:{name}": json.loads(dump_scenario(s)) for name, s in builtin_scenarios(2).items()}
    presets = {
        name: {
            'scenario': preset['scenario'],
            'M': preset['M'],
            'curves': [{'mode': c.mode.value, 'N': c.N, 'demands': c.demands.values()} for c in preset['curves']],
        }
        for name, preset in SWEEP_PRESETS.items()
    }
    return jsonify({'success': True, 'scenarios': scenarios, 'presets': presets})


@app.route('/api/solve', methods=['POST'])
def solve():
    """
    求解单个需求点

    请求格式（JSON）：{'scenario': 'builtin:mi', 'antennas': 1, 'mode': 'igs', 'extension': 1,
                      'demand': 0.5, 'budget': 100}
    响应格式（JSON）：{'success': true, 'status': 'converged', 'sum_power': ..., 'power_trace': [...],
                      'rates': {'1-1': ...}, 'ranks': {'1-1': 2}, 'iterations': 5, 'cache_hit': false}
    """
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        return _error('请求体必须是JSON对象')
    if 'demand' not in data:
        return _error('缺少字段 demand')

    system = get_system()
    try:
        scenario = _scenario_from_request(data, system)
        config = SignalingConfig.uniform(
            data.get('mode', 'igs'),
            int(data.get('extension', 1)),
            float(data['demand']),
            float(data.get('budget', system.config.default_budget)),
        )
        options = system.config.solver_options()

        result = system.cache_manager.get(scenario, config, options)
        cache_hit = result is not None
        if result is None:
            result = minimize_sum_power(scenario, config, options)
            system.cache_manager.set(scenario, config, options, result)
    except (IMACError, TypeError, ValueError) as e:
        logger.warning(f"求解请求失败: {e}")
        return _error(str(e))

    return jsonify({
        'success': True,
        'scenario': scenario.name,
        'status': result.status.value,
        'sum_power': None if result.Qset is None else result.sum_power,
        'power_trace': result.power_trace,
        'rates': {_user_key(u): r for u, r in result.rates.items()},
        'ranks': {_user_key(u): r for u, r in result.ranks.items()},
        'iterations': result.iterations,
        'message': result.message,
        'cache_hit': cache_hit,
    })


@app.route('/api/sweep', methods=['POST'])
def sweep():
    """
    需求扫描，返回CSV

    请求格式（JSON）：{'scenario': 'builtin:mi', 'antennas': 1, 'modes': 'pgs:1,igs:1',
                      'demands': '0.01:0.11:1.0', 'workers': 2}
    """
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        return _error('请求体必须是JSON对象')
    if 'demands' not in data:
        return _error('缺少字段 demands')
    if isinstance(data.get('scenario'), dict):
        return _error('扫描只支持场景ID或路径')

    system = get_system()
    try:
        antennas = data.get('antennas')
        spec = SweepSpec.from_grid(
            str(data.get('scenario', system.config.default_scenario)),
            int(antennas) if antennas else None,
            parse_modes(data.get('modes', 'pgs:1,igs:1,igs:2')),
            parse_demands(data['demands']),
            options=system.config.solver_options(),
            budget=float(data.get('budget', system.config.default_budget)),
        )
        workers = int(data.get('workers', system.config.sweep_workers))
        if workers < 1:
            raise InputError('workers 必须 >= 1')
        rows = run_sweep(spec, workers=workers, cache=system.cache_manager)
    except (IMACError, TypeError, ValueError) as e:
        logger.warning(f"扫描请求失败: {e}")
        return _error(str(e))

    return Response(emit_table(rows), mimetype='text/csv')


# ==================== 缓存统计 ====================
@app.route('/api/cache/stats', methods=['GET'])
def get_cache_stats():
    """获取缓存统计信息"""
    stats = get_system().cache_manager.get_stats()
    return jsonify({'success': True, 'stats': stats})


@app.route('/api/cache/clear', methods=['POST'])
def clear_cache():
    """清空缓存"""
    count = get_system().cache_manager.clear()
    return jsonify({'success': True, 'message': f'缓存已清空（{count} 条）'})


if __name__ == '__main__':
    # host='127.0.0.1' 只允许本地访问
    print("启动服务: http://127.0.0.1:5000")
    app.run(host='127.0.0.1', port=5000, debug=False, threaded=True)
