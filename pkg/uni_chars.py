WARN = '⚠️'
INFO = '📝'
ERROR = '❌'
SUCCESS = '✅'
PERCENT = '💯'
TIME = '⏱'
LAUNCH = '🚀'

ROUND = '🔄'
CLIENT = '👨‍💻'
ORACLE = '🔮'
REPORT = '📊'
SWEEP = '🧹'
DATASET = '📦'
